use std::fmt::Display;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use nncommittee::experiment::write_experiment;
use nncommittee::{
    build_tensor, det_curve, generate_synthetic, identification_rate, load_dataset, min_dcf,
    run_experiment, save_dataset, split_scores, split_train_test, train, Checkpoint, Committee,
    Dataset, DcfParams, ExperimentConfig, MlpTopology, Normalizer, Scheme, SchemeId, SyntheticSpec,
    TrainConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "nncommittee",
    version,
    about = "Train and evaluate committees of Levenberg-Marquardt perceptrons"
)]
struct Cli {
    /// TOML file with default values; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    GenData(GenDataArgs),
    /// Train one network and save it with its normalizer.
    Train(TrainArgs),
    /// Combine trained networks into a committee.
    Committee(CommitteeArgs),
    /// Score a network or committee on the test trials of a dataset.
    Eval(EvalArgs),
    /// Repeat training over many seeds and summarize per scheme.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    people: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standard deviation of the per-person means (noise has unit variance).
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// mse or msereg
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Lowest trial ids per person used for training.
    #[arg(long)]
    train_per_person: Option<usize>,
    #[arg(long)]
    mu0: Option<f64>,
    #[arg(long)]
    mu_max: Option<f64>,
    /// Per-epoch training log (CSV).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CommitteeArgs {
    /// Comma-separated model files.
    #[arg(long, value_delimiter = ',')]
    models: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Trials per person skipped as training data; 0 scores the whole file.
    #[arg(long)]
    train_per_person: Option<usize>,
    #[arg(long)]
    p_true: Option<f64>,
    #[arg(long)]
    c_miss: Option<f64>,
    #[arg(long)]
    c_fa: Option<f64>,
    #[arg(long)]
    det_out: Option<PathBuf>,
    #[arg(long)]
    svg_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of a,b,c,d.
    #[arg(long)]
    schemes: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    committee_size: Option<usize>,
    #[arg(long)]
    train_per_person: Option<usize>,
    #[arg(long)]
    mse_epochs: Option<usize>,
    #[arg(long)]
    msereg_epochs: Option<usize>,
    #[arg(long)]
    p_true: Option<f64>,
    #[arg(long)]
    c_miss: Option<f64>,
    #[arg(long)]
    c_fa: Option<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Give every committee member the single-network seed.
    #[arg(long)]
    clone_members: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad flag values, missing required options.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

/// A training run gave up before finishing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Stalled(String);

/// Flag values merged with the config file. Every resolved value is echoed.
struct Settings {
    section: &'static str,
    table: toml::Table,
    echo: Vec<(String, String)>,
}

impl Settings {
    fn load(path: Option<&Path>, section: &'static str) -> anyhow::Result<Self> {
        let table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("{}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| nncommittee::Error::InvalidData(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        Ok(Self {
            section,
            table,
            echo: Vec::new(),
        })
    }

    /// `[section] key` wins over a top-level `key`.
    fn lookup(&self, key: &str) -> Option<String> {
        let alt = key.replace('-', "_");
        let find = |t: &toml::Table| t.get(key).or_else(|| t.get(&alt)).cloned();
        let value = self
            .table
            .get(self.section)
            .and_then(|s| s.as_table())
            .and_then(find)
            .or_else(|| find(&self.table))?;
        Some(match value {
            toml::Value::String(s) => s,
            toml::Value::Array(items) => items
                .iter()
                .map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_string))
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        })
    }

    fn resolve<T>(&mut self, key: &str, flag: Option<T>, default: Option<T>) -> anyhow::Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.lookup(key) {
                Some(s) => s
                    .parse()
                    .map_err(|e| Usage(format!("config value {key} = {s:?}: {e}")))?,
                None => default.ok_or_else(|| Usage(format!("missing required option --{key}")))?,
            },
        };
        self.echo.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    fn path(&mut self, key: &str, flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
        let s = self.resolve(key, flag.map(|p| p.display().to_string()), None)?;
        Ok(PathBuf::from(s))
    }

    fn optional_path(&mut self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        let p = flag.or_else(|| self.lookup(key).map(PathBuf::from))?;
        self.echo.push((key.to_string(), p.display().to_string()));
        Some(p)
    }

    fn print(&self) {
        println!("# {}", self.section);
        for (k, v) in &self.echo {
            println!("#   {k} = {v}");
        }
    }
}

fn train_test(data: &Dataset, train_per_person: usize) -> anyhow::Result<(Dataset, Dataset)> {
    Ok(split_train_test(data, train_per_person)?)
}

fn gen_data(args: GenDataArgs, cfg: Option<&Path>) -> anyhow::Result<()> {
    let mut s = Settings::load(cfg, "gen-data")?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        people: s.resolve("people", args.people, Some(d.people))?,
        trials: s.resolve("trials", args.trials, Some(d.trials))?,
        dims: s.resolve("dims", args.dims, Some(d.dims))?,
        seed: s.resolve("seed", args.seed, Some(d.seed))?,
        spread: s.resolve("spread", args.spread, Some(d.spread))?,
    };
    let out = s.path("out", args.out)?;
    s.print();
    let ds = generate_synthetic::<f64>(&spec).map_err(|e| Usage(e.to_string()))?;
    save_dataset(&ds, &out)?;
    println!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs, cfg: Option<&Path>) -> anyhow::Result<()> {
    let mut s = Settings::load(cfg, "train")?;
    let data = s.path("data", args.data)?;
    let scheme: Scheme = s
        .resolve("scheme", args.scheme, Some("mse".to_string()))?
        .parse()
        .map_err(|e: nncommittee::Error| Usage(e.to_string()))?;
    let mut tcfg = TrainConfig::<f64>::new(scheme);
    tcfg.epochs = s.resolve("epochs", args.epochs, Some(tcfg.epochs))?;
    tcfg.seed = s.resolve("seed", args.seed, Some(0))?;
    tcfg.mu0 = s.resolve("mu0", args.mu0, Some(tcfg.mu0))?;
    tcfg.mu_max = s.resolve("mu-max", args.mu_max, Some(tcfg.mu_max))?;
    let hidden = s.resolve(
        "hidden",
        args.hidden,
        Some(MlpTopology::default().hidden_dim),
    )?;
    let k = s.resolve("train-per-person", args.train_per_person, Some(5))?;
    let report_path = s.optional_path("report", args.report);
    let out = s.path("out", args.out)?;
    s.print();
    tcfg.validate().map_err(|e| Usage(e.to_string()))?;

    let ds: Dataset = load_dataset(&data, None)?;
    let (train_set, _) = train_test(&ds, k)?;
    let normalizer = Normalizer::fit(&train_set);
    let topo =
        MlpTopology::new(ds.dims(), hidden, ds.people_count()).map_err(|e| Usage(e.to_string()))?;
    let m0 = nncommittee::init_weights(topo, tcfg.seed);
    let (model, report) = train(&m0, &normalizer.apply_dataset(&train_set)?, &tcfg)?;
    if let Some(p) = report_path {
        let f = fs::File::create(&p).with_context(|| p.display().to_string())?;
        report.write_csv(BufWriter::new(f))?;
    }
    Checkpoint::Single {
        model,
        normalizer: Some(normalizer),
    }
    .save(&out)?;
    println!(
        "topology {topo}, scheme {}, status {:?}, accepted {}, rejected {}, final mse {}",
        scheme.label(),
        report.status,
        report.accepted_steps,
        report.rejected_steps,
        report.final_mse
    );
    if let Some(h) = report.hyperparameters() {
        println!("alpha {} beta {} gamma {}", h.alpha, h.beta, h.gamma);
    }
    println!("saved {}", out.display());
    if report.stalled() {
        return Err(Stalled(format!("training stalled (final mu {})", report.final_mu)).into());
    }
    Ok(())
}

fn committee_cmd(args: CommitteeArgs, cfg: Option<&Path>) -> anyhow::Result<()> {
    let mut s = Settings::load(cfg, "committee")?;
    let joined = args
        .models
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(",");
    let models = s.resolve("models", (!joined.is_empty()).then_some(joined), None)?;
    let out = s.path("out", args.out)?;
    s.print();

    let mut experts = Vec::new();
    let mut normalizer: Option<Normalizer<f64>> = None;
    for (i, p) in models
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .enumerate()
    {
        let (model, norm) = match Checkpoint::<f64>::load(p)? {
            Checkpoint::Single { model, normalizer } => (model, normalizer),
            Checkpoint::Committee { .. } => {
                return Err(
                    nncommittee::Error::Checkpoint(format!("{p}: already a committee")).into(),
                )
            }
        };
        if i == 0 {
            normalizer = norm;
        } else if norm != normalizer {
            return Err(nncommittee::Error::Checkpoint(format!(
                "{p}: normalizer differs from the first model"
            ))
            .into());
        }
        experts.push(model);
    }
    let committee = Committee::new(experts).map_err(|e| Usage(e.to_string()))?;
    let n = committee.len();
    Checkpoint::Committee {
        committee,
        normalizer,
    }
    .save(&out)?;
    println!("saved committee of {n} to {}", out.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs, cfg: Option<&Path>) -> anyhow::Result<()> {
    let mut s = Settings::load(cfg, "eval")?;
    let model_path = s.path("model", args.model)?;
    let data = s.path("data", args.data)?;
    let k = s.resolve("train-per-person", args.train_per_person, Some(5))?;
    let d = DcfParams::<f64>::default();
    let params = DcfParams {
        p_true: s.resolve("p-true", args.p_true, Some(d.p_true))?,
        c_miss: s.resolve("c-miss", args.c_miss, Some(d.c_miss))?,
        c_fa: s.resolve("c-fa", args.c_fa, Some(d.c_fa))?,
    };
    let det_out = s.path("det-out", args.det_out)?;
    let svg_out = s.optional_path("svg-out", args.svg_out);
    s.print();
    params.validate().map_err(|e| Usage(e.to_string()))?;

    let checkpoint = Checkpoint::<f64>::load(&model_path)?;
    let ds: Dataset = load_dataset(&data, None)?;
    let test = if k == 0 { ds } else { train_test(&ds, k)?.1 };
    let identity = Normalizer::identity(test.dims());
    let normalizer = checkpoint.normalizer().unwrap_or(&identity);
    let tensor = match &checkpoint {
        Checkpoint::Single { model, .. } => build_tensor(model, &test, normalizer)?,
        Checkpoint::Committee { committee, .. } => build_tensor(committee, &test, normalizer)?,
    };
    let ident = identification_rate(&tensor);
    let split = split_scores(&tensor)?;
    let dcf = min_dcf(&split, params)?;
    let det = det_curve(&split)?;
    let file = |p: &Path| -> anyhow::Result<BufWriter<fs::File>> {
        Ok(BufWriter::new(
            fs::File::create(p).with_context(|| p.display().to_string())?,
        ))
    };
    det.write_csv(file(&det_out)?)?;
    if let Some(p) = &svg_out {
        det.write_svg(file(p)?)?;
    }
    println!("identification_rate {ident} ({:.2}%)", ident * 100.0);
    println!(
        "min_dcf {} ({:.2}%) at threshold {}",
        dcf.min_dcf,
        dcf.min_dcf * 100.0,
        dcf.threshold
    );
    Ok(())
}

fn experiment_cmd(args: ExperimentArgs, cfg: Option<&Path>) -> anyhow::Result<()> {
    let mut s = Settings::load(cfg, "experiment")?;
    let data = s.path("data", args.data)?;
    let d = ExperimentConfig::<f64>::default();
    let runs = s.resolve("runs", args.runs, Some(d.runs))?;
    let base_seed = s.resolve("seed", args.seed, Some(d.base_seed))?;
    let schemes = s.resolve("schemes", args.schemes, Some("a,b,c,d".to_string()))?;
    let schemes = SchemeId::parse_list(&schemes).map_err(|e| Usage(e.to_string()))?;
    let hidden = s.resolve("hidden", args.hidden, Some(d.topology.hidden_dim))?;
    let committee_size = s.resolve(
        "committee-size",
        args.committee_size,
        Some(d.committee_size),
    )?;
    let k = s.resolve("train-per-person", args.train_per_person, Some(5))?;
    let mse_epochs = s.resolve("mse-epochs", args.mse_epochs, Some(d.mse.epochs))?;
    let msereg_epochs = s.resolve("msereg-epochs", args.msereg_epochs, Some(d.msereg.epochs))?;
    let dcf = DcfParams {
        p_true: s.resolve("p-true", args.p_true, Some(d.dcf.p_true))?,
        c_miss: s.resolve("c-miss", args.c_miss, Some(d.dcf.c_miss))?,
        c_fa: s.resolve("c-fa", args.c_fa, Some(d.dcf.c_fa))?,
    };
    let jobs = s.resolve("jobs", args.jobs, Some(0))?;
    let bins = s.resolve("bins", args.bins, Some(10))?;
    let clone_members = s.resolve(
        "clone-members",
        args.clone_members.then_some(true),
        Some(false),
    )?;
    let out = s.path("out", args.out)?;
    s.print();

    let ds: Dataset = load_dataset(&data, None)?;
    let (train_set, test_set) = train_test(&ds, k)?;
    let topo =
        MlpTopology::new(ds.dims(), hidden, ds.people_count()).map_err(|e| Usage(e.to_string()))?;
    let cfg = ExperimentConfig {
        runs,
        base_seed,
        schemes,
        topology: topo,
        committee_size,
        mse: TrainConfig::mse().with_epochs(mse_epochs),
        msereg: TrainConfig::msereg().with_epochs(msereg_epochs),
        dcf,
        jobs,
        clone_members,
    };
    let records = run_experiment(&train_set, &test_set, &cfg).map_err(|e| match e {
        nncommittee::Error::InvalidArgument(m) => anyhow!(Usage(m)),
        other => other.into(),
    })?;
    let stalled = records.iter().filter(|r| r.stalled).count();
    let summary = match write_experiment(&out, &records, bins) {
        Ok(s) => s,
        Err(nncommittee::Error::InvalidData(m)) if stalled > 0 => {
            bail!(Stalled(format!("{m} ({stalled} stalled runs excluded)")))
        }
        Err(nncommittee::Error::InvalidArgument(m)) => bail!(Usage(m)),
        Err(e) => return Err(e.into()),
    };
    println!("scheme              ident_mean ident_std  dcf_mean   dcf_std    corr");
    for row in &summary.schemes {
        println!(
            "{:<19} {:<10.4} {:<10.4} {:<10.4} {:<10.4} {}",
            row.scheme.to_string(),
            row.ident.mean,
            row.ident.std,
            row.dcf.mean,
            row.dcf.std,
            row.corr.map_or("NA".to_string(), |c| format!("{c:.3}"))
        );
        if row.excluded > 0 {
            println!("  {} stalled runs excluded", row.excluded);
        }
    }
    println!("wrote {}", out.join("summary.csv").display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    if err.downcast_ref::<Stalled>().is_some() {
        return 3;
    }
    match err.downcast_ref::<nncommittee::Error>() {
        Some(nncommittee::Error::InvalidArgument(_)) => 1,
        Some(nncommittee::Error::NotPositiveDefinite) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a, cfg),
        Command::Train(a) => train_cmd(a, cfg),
        Command::Committee(a) => committee_cmd(a, cfg),
        Command::Eval(a) => eval_cmd(a, cfg),
        Command::Experiment(a) => experiment_cmd(a, cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // io errors already include their cause in the message
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
