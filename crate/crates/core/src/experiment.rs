//! Multi-start study: many random initializations per scheme, with
//! identification rate and minimum DCF recorded for each trained scorer.
//!
//! # Seeds
//!
//! Slot `m` of run `r` is initialized from
//! `splitmix64(base_seed + (r << 16 | m))` (wrapping). The map is a bijection
//! of the counter, so distinct `(run, slot)` pairs never share a seed for
//! `m < 2^16` and `r < 2^48`. Single-network schemes use slot 0 and committee
//! members use slots `1..=M`, so every committee run trains a fresh triple.
//! With `clone_members` every member takes slot 0 instead, which makes a
//! committee run reproduce the single-network run of the same index.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::committee::Committee;
use crate::data::{LabeledDataset, Normalizer};
use crate::error::{Error, Result};
use crate::eval::{build_tensor, identification_rate, min_dcf, split_scores, DcfParams, Scorer};
use crate::gauss_newton::Batch;
use crate::mlp::{init_weights, MlpModel, MlpTopology};
use crate::scalar::Real;
use crate::train::{train_batch, Scheme, TrainConfig};

const MEMBER_BITS: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    /// (a) one network, plain LM.
    MseSingle,
    /// (b) one network, regularized LM.
    MseRegSingle,
    /// (c) committee of (a) networks.
    MseCommittee,
    /// (d) committee of (b) networks.
    MseRegCommittee,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [
        SchemeId::MseSingle,
        SchemeId::MseRegSingle,
        SchemeId::MseCommittee,
        SchemeId::MseRegCommittee,
    ];

    pub fn letter(self) -> char {
        match self {
            SchemeId::MseSingle => 'a',
            SchemeId::MseRegSingle => 'b',
            SchemeId::MseCommittee => 'c',
            SchemeId::MseRegCommittee => 'd',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::MseSingle => "mse",
            SchemeId::MseRegSingle => "msereg",
            SchemeId::MseCommittee => "mse_committee",
            SchemeId::MseRegCommittee => "msereg_committee",
        }
    }

    pub fn family(self) -> Scheme {
        match self {
            SchemeId::MseSingle | SchemeId::MseCommittee => Scheme::Mse,
            SchemeId::MseRegSingle | SchemeId::MseRegCommittee => Scheme::MseReg,
        }
    }

    pub fn is_committee(self) -> bool {
        matches!(self, SchemeId::MseCommittee | SchemeId::MseRegCommittee)
    }

    /// Parses a comma-separated list of scheme letters such as `a,b,c,d`.
    pub fn parse_list(s: &str) -> Result<Vec<SchemeId>> {
        let mut out: Vec<SchemeId> = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::InvalidArgument("no schemes selected".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.letter(), self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| s.eq_ignore_ascii_case(&id.letter().to_string()) || s == id.name())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme {s:?} (expected a-d)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig<T> {
    pub runs: usize,
    pub base_seed: u64,
    pub schemes: Vec<SchemeId>,
    pub topology: MlpTopology,
    pub committee_size: usize,
    pub mse: TrainConfig<T>,
    pub msereg: TrainConfig<T>,
    pub dcf: DcfParams<T>,
    /// Worker threads; 0 uses rayon's default.
    pub jobs: usize,
    /// Give every committee member the seed of member 0.
    pub clone_members: bool,
}

impl<T: Real> Default for ExperimentConfig<T> {
    fn default() -> Self {
        Self {
            runs: 100,
            base_seed: 0,
            schemes: SchemeId::ALL.to_vec(),
            topology: MlpTopology::default(),
            committee_size: 3,
            mse: TrainConfig::mse(),
            msereg: TrainConfig::msereg(),
            dcf: DcfParams::default(),
            jobs: 0,
            clone_members: false,
        }
    }
}

impl<T: Real> ExperimentConfig<T> {
    fn train_config(&self, family: Scheme) -> &TrainConfig<T> {
        match family {
            Scheme::Mse => &self.mse,
            Scheme::MseReg => &self.msereg,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.runs < 2 {
            return Err(Error::InvalidArgument(
                "an experiment needs at least 2 runs".into(),
            ));
        }
        if self.committee_size == 0 || self.committee_size >= (1 << MEMBER_BITS) - 1 {
            return Err(Error::InvalidArgument("committee size out of range".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidArgument("no schemes selected".into()));
        }
        self.mse.validate()?;
        self.msereg.validate()?;
        self.dcf.validate()
    }

    /// Seed of the single-network scheme in `run`.
    pub fn single_seed(&self, run: usize) -> u64 {
        derive_seed(self.base_seed, run, 0)
    }

    /// Seed of committee member `member` (0-based) in `run`.
    pub fn member_seed(&self, run: usize, member: usize) -> u64 {
        derive_seed(
            self.base_seed,
            run,
            if self.clone_members { 0 } else { member + 1 },
        )
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initialization seed of `member` in `run`; see the module docs.
pub fn derive_seed(base_seed: u64, run: usize, member: usize) -> u64 {
    let counter = ((run as u64) << MEMBER_BITS) | member as u64;
    splitmix64(base_seed.wrapping_add(counter))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord<T> {
    pub scheme: SchemeId,
    pub run_index: usize,
    pub seeds: Vec<u64>,
    pub identification_rate: T,
    pub min_dcf: T,
    /// At least one member's training stalled; excluded from summaries.
    pub stalled: bool,
}

/// Trains and scores every requested scheme for `cfg.runs` runs.
///
/// `train` and `test` hold raw features; the normalizer is fitted on `train`.
/// Records come back ordered by scheme, then run index.
pub fn run_experiment<T: Real>(
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    cfg: &ExperimentConfig<T>,
) -> Result<Vec<RunRecord<T>>> {
    cfg.validate()?;
    if train.people_count() != cfg.topology.output_dim || train.dims() != cfg.topology.input_dim {
        return Err(Error::InvalidArgument(format!(
            "topology {} does not match data ({} features, {} people)",
            cfg.topology,
            train.dims(),
            train.people_count()
        )));
    }
    let normalizer = Normalizer::fit(train);
    let batch = Batch::from_dataset(&normalizer.apply_dataset(train)?)?;
    // scoring needs uniform trials; fail before any training
    if test.uniform_trials().is_none() {
        return Err(Error::InvalidData(
            "test split has a different number of trials per person".into(),
        ));
    }

    let one_run = |run: usize| -> Result<Vec<RunRecord<T>>> {
        let mut out = Vec::new();
        for family in [Scheme::Mse, Scheme::MseReg] {
            let wanted: Vec<SchemeId> = cfg
                .schemes
                .iter()
                .copied()
                .filter(|s| s.family() == family)
                .collect();
            if wanted.is_empty() {
                continue;
            }
            let tcfg = cfg.train_config(family);
            let train_one = |seed: u64| -> Result<(MlpModel<T>, bool, u64)> {
                let (model, report) = train_batch(&init_weights(cfg.topology, seed), &batch, tcfg)?;
                Ok((model, report.stalled(), seed))
            };
            let needs_single = cfg.clone_members || wanted.iter().any(|s| !s.is_committee());
            let single = if needs_single {
                Some(train_one(cfg.single_seed(run))?)
            } else {
                None
            };
            let mut members: Vec<(MlpModel<T>, bool, u64)> = Vec::new();
            if wanted.iter().any(|s| s.is_committee()) {
                for m in 0..cfg.committee_size {
                    members.push(match &single {
                        Some(first) if cfg.clone_members => first.clone(),
                        _ => train_one(cfg.member_seed(run, m))?,
                    });
                }
            }
            for scheme in wanted {
                let used: &[(MlpModel<T>, bool, u64)] = if scheme.is_committee() {
                    &members
                } else {
                    std::slice::from_ref(single.as_ref().expect("single model trained"))
                };
                let record = |scorer: &dyn Scorer<T>| -> Result<RunRecord<T>> {
                    let tensor = build_tensor(scorer, test, &normalizer)?;
                    let dcf = min_dcf(&split_scores(&tensor)?, cfg.dcf)?;
                    Ok(RunRecord {
                        scheme,
                        run_index: run,
                        seeds: used.iter().map(|m| m.2).collect(),
                        identification_rate: identification_rate(&tensor),
                        min_dcf: dcf.min_dcf,
                        stalled: used.iter().any(|m| m.1),
                    })
                };
                out.push(if scheme.is_committee() {
                    let committee = Committee::new(used.iter().map(|m| m.0.clone()).collect())?;
                    record(&committee)?
                } else {
                    record(&used[0].0)?
                });
            }
        }
        Ok(out)
    };

    let runs: Vec<usize> = (0..cfg.runs).collect();
    let per_run: Vec<Result<Vec<RunRecord<T>>>> = if cfg.jobs == 1 {
        runs.iter().map(|&r| one_run(r)).collect()
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if cfg.jobs > 0 {
            builder = builder.num_threads(cfg.jobs);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| runs.par_iter().map(|&r| one_run(r)).collect())
    };
    let mut records = Vec::new();
    for r in per_run {
        records.extend(r?);
    }
    records.sort_by_key(|r| (r.scheme, r.run_index));
    Ok(records)
}

/// Runs a single scheme.
pub fn run_scheme<T: Real>(
    scheme: SchemeId,
    train: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    cfg: &ExperimentConfig<T>,
) -> Result<Vec<RunRecord<T>>> {
    let cfg = ExperimentConfig {
        schemes: vec![scheme],
        ..cfg.clone()
    };
    run_experiment(train, test, &cfg)
}

/// Sample mean and unbiased (n − 1) standard deviation: the moment-matched
/// Gaussian of a metric's histogram.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFit<T> {
    pub mean: T,
    pub std: T,
}

pub fn gaussian_fit<T: Real>(values: &[T]) -> Result<GaussianFit<T>> {
    if values.len() < 2 {
        return Err(Error::InvalidData("need at least two values".into()));
    }
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let ss: T = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    Ok(GaussianFit {
        mean,
        std: (ss / (n - T::one())).sqrt(),
    })
}

/// Pearson correlation; `None` when either variable has zero variance.
pub fn pearson<T: Real>(xs: &[T], ys: &[T]) -> Option<T> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = T::from_usize_lossy(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == T::zero() || syy == T::zero() {
        return None;
    }
    Some(
        (sxy / (sxx.sqrt() * syy.sqrt()))
            .max(-T::one())
            .min(T::one()),
    )
}

/// Least-squares line `y = slope·x + intercept`; `None` when `x` is constant.
pub fn least_squares_line<T: Real>(xs: &[T], ys: &[T]) -> Option<(T, T)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = T::from_usize_lossy(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeSummary<T> {
    pub scheme: SchemeId,
    /// Records that entered the statistics.
    pub runs: usize,
    /// Stalled records left out.
    pub excluded: usize,
    pub ident: GaussianFit<T>,
    pub dcf: GaussianFit<T>,
    /// `corr(identification rate, min DCF)`; `None` if undefined.
    pub corr: Option<T>,
    pub line: Option<(T, T)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSummary<T> {
    pub schemes: Vec<SchemeSummary<T>>,
}

impl<T: Real> ExperimentSummary<T> {
    pub fn get(&self, scheme: SchemeId) -> Option<&SchemeSummary<T>> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }

    /// `scheme,ident_mean,ident_std,dcf_mean,dcf_std,corr,slope,intercept,runs,excluded`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let opt = |v: Option<T>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "scheme",
            "ident_mean",
            "ident_std",
            "dcf_mean",
            "dcf_std",
            "corr",
            "slope",
            "intercept",
            "runs",
            "excluded",
        ])?;
        for s in &self.schemes {
            wtr.write_record([
                s.scheme.to_string(),
                s.ident.mean.to_string(),
                s.ident.std.to_string(),
                s.dcf.mean.to_string(),
                s.dcf.std.to_string(),
                opt(s.corr),
                opt(s.line.map(|l| l.0)),
                opt(s.line.map(|l| l.1)),
                s.runs.to_string(),
                s.excluded.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<summary writer>", e))?;
        Ok(())
    }
}

fn schemes_in<T>(records: &[RunRecord<T>]) -> Vec<SchemeId> {
    let mut s: Vec<SchemeId> = records.iter().map(|r| r.scheme).collect();
    s.sort();
    s.dedup();
    s
}

fn valid_metrics<T: Real>(records: &[RunRecord<T>], scheme: SchemeId) -> (Vec<T>, Vec<T>, usize) {
    let mut ident = Vec::new();
    let mut dcf = Vec::new();
    let mut excluded = 0;
    for r in records.iter().filter(|r| r.scheme == scheme) {
        if r.stalled {
            excluded += 1;
        } else {
            ident.push(r.identification_rate);
            dcf.push(r.min_dcf);
        }
    }
    (ident, dcf, excluded)
}

pub fn summarize<T: Real>(records: &[RunRecord<T>]) -> Result<ExperimentSummary<T>> {
    let schemes = schemes_in(records)
        .into_iter()
        .map(|scheme| {
            let (ident, dcf, excluded) = valid_metrics(records, scheme);
            if ident.len() < 2 {
                return Err(Error::InvalidData(format!(
                    "scheme {scheme} has {} valid records, need at least 2",
                    ident.len()
                )));
            }
            Ok(SchemeSummary {
                scheme,
                runs: ident.len(),
                excluded,
                ident: gaussian_fit(&ident)?,
                dcf: gaussian_fit(&dcf)?,
                corr: pearson(&ident, &dcf),
                line: least_squares_line(&ident, &dcf),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentSummary { schemes })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Ident,
    Dcf,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Ident => "ident",
            Metric::Dcf => "dcf",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram<T> {
    pub scheme: SchemeId,
    pub metric: Metric,
    pub lo: T,
    pub hi: T,
    pub counts: Vec<usize>,
}

impl<T: Real> Histogram<T> {
    /// Equal-width bins over `[lo, hi]`; the top edge belongs to the last bin.
    /// A zero-width range puts everything in the first bin.
    pub fn from_values(
        scheme: SchemeId,
        metric: Metric,
        values: &[T],
        bins: usize,
    ) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidArgument(
                "histograms need at least 2 bins".into(),
            ));
        }
        let lo = values.iter().copied().fold(T::infinity(), T::min);
        let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
        let mut counts = vec![0; bins];
        let width = (hi - lo) / T::from_usize_lossy(bins);
        for &v in values {
            let idx = if width > T::zero() {
                ((v - lo) / width)
                    .floor()
                    .to_usize()
                    .unwrap_or(0)
                    .min(bins - 1)
            } else {
                0
            };
            counts[idx] += 1;
        }
        Ok(Self {
            scheme,
            metric,
            lo,
            hi,
            counts,
        })
    }

    pub fn bin_edges(&self, bin: usize) -> (T, T) {
        let width = (self.hi - self.lo) / T::from_usize_lossy(self.counts.len());
        (
            self.lo + width * T::from_usize_lossy(bin),
            self.lo + width * T::from_usize_lossy(bin + 1),
        )
    }

    /// `bin,lo,hi,count`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["bin", "lo", "hi", "count"])?;
        for (b, &c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.bin_edges(b);
            wtr.write_record([b.to_string(), lo.to_string(), hi.to_string(), c.to_string()])?;
        }
        wtr.flush()
            .map_err(|e| Error::io("<histogram writer>", e))?;
        Ok(())
    }
}

/// Histograms of both metrics for every scheme, over non-stalled records.
pub fn emit_histograms<T: Real>(
    records: &[RunRecord<T>],
    bins: usize,
) -> Result<Vec<Histogram<T>>> {
    let mut out = Vec::new();
    for scheme in schemes_in(records) {
        let (ident, dcf, _) = valid_metrics(records, scheme);
        if ident.is_empty() {
            continue;
        }
        out.push(Histogram::from_values(scheme, Metric::Ident, &ident, bins)?);
        out.push(Histogram::from_values(scheme, Metric::Dcf, &dcf, bins)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scatter<T> {
    pub scheme: SchemeId,
    /// `(run_index, identification rate, min DCF)`
    pub points: Vec<(usize, T, T)>,
    pub line: Option<(T, T)>,
}

impl<T: Real> Scatter<T> {
    /// `run_index,ident_rate,min_dcf,fitted_dcf`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["run_index", "ident_rate", "min_dcf", "fitted_dcf"])?;
        for &(run, x, y) in &self.points {
            let fitted = self
                .line
                .map_or_else(|| "NA".to_string(), |(s, i)| (s * x + i).to_string());
            wtr.write_record([run.to_string(), x.to_string(), y.to_string(), fitted])?;
        }
        wtr.flush().map_err(|e| Error::io("<scatter writer>", e))?;
        Ok(())
    }
}

pub fn emit_scatter<T: Real>(records: &[RunRecord<T>]) -> Result<Vec<Scatter<T>>> {
    let mut out = Vec::new();
    for scheme in schemes_in(records) {
        let points: Vec<(usize, T, T)> = records
            .iter()
            .filter(|r| r.scheme == scheme && !r.stalled)
            .map(|r| (r.run_index, r.identification_rate, r.min_dcf))
            .collect();
        if points.len() < 2 {
            return Err(Error::InvalidData(format!(
                "scheme {scheme} has fewer than 2 valid records"
            )));
        }
        let xs: Vec<T> = points.iter().map(|p| p.1).collect();
        let ys: Vec<T> = points.iter().map(|p| p.2).collect();
        out.push(Scatter {
            scheme,
            line: least_squares_line(&xs, &ys),
            points,
        });
    }
    Ok(out)
}

/// `run_index,seed,ident_rate,min_dcf,status`; committee seeds are joined by `;`.
pub fn write_records<T: Real, W: Write>(records: &[RunRecord<T>], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["run_index", "seed", "ident_rate", "min_dcf", "status"])?;
    for r in records {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        wtr.write_record([
            r.run_index.to_string(),
            seeds.join(";"),
            r.identification_rate.to_string(),
            r.min_dcf.to_string(),
            if r.stalled { "stalled" } else { "ok" }.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<records writer>", e))?;
    Ok(())
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `summary.csv` in `dir` and, per scheme, a subdirectory named after
/// the scheme holding `records.csv`, `histogram_ident.csv`,
/// `histogram_dcf.csv` and `scatter.csv`.
pub fn write_experiment<T: Real>(
    dir: &Path,
    records: &[RunRecord<T>],
    bins: usize,
) -> Result<ExperimentSummary<T>> {
    let summary = summarize(records)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    summary.write_csv(create(&dir.join("summary.csv"))?)?;
    let histograms = emit_histograms(records, bins)?;
    let scatters = emit_scatter(records)?;
    for scheme in schemes_in(records) {
        let sub = dir.join(scheme.to_string());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let own: Vec<RunRecord<T>> = records
            .iter()
            .filter(|r| r.scheme == scheme)
            .cloned()
            .collect();
        write_records(&own, create(&sub.join("records.csv"))?)?;
        for h in histograms.iter().filter(|h| h.scheme == scheme) {
            h.write_csv(create(
                &sub.join(format!("histogram_{}.csv", h.metric.name())),
            )?)?;
        }
        for s in scatters.iter().filter(|s| s.scheme == scheme) {
            s.write_csv(create(&sub.join("scatter.csv"))?)?;
        }
    }
    Ok(summary)
}
