use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nncommittee"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("experiment"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["train", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
}

#[test]
fn missing_data_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = dir.path().join("m.json");
    let o = run(&["train", "--data", p(&missing), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
}

#[test]
fn malformed_data_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "person_id,trial_id,f1\n0,0,x\n").unwrap();
    let o = run(&[
        "eval",
        "--model",
        p(&data),
        "--data",
        p(&data),
        "--det-out",
        p(&dir.path().join("d.csv")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_scheme_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "train",
        "--data",
        "x.csv",
        "--scheme",
        "sgd",
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data.csv");
    let o = run(&[
        "gen-data",
        "--people",
        "4",
        "--trials",
        "8",
        "--dims",
        "3",
        "--seed",
        "1",
        "--spread",
        "2.0",
        "--out",
        p(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let mut models = Vec::new();
    for seed in 0..3 {
        let m = d.join(format!("m{seed}.json"));
        let o = run(&[
            "train",
            "--data",
            p(&data),
            "--scheme",
            "mse",
            "--hidden",
            "4",
            "--train-per-person",
            "4",
            "--seed",
            &seed.to_string(),
            "--out",
            p(&m),
            "--report",
            p(&d.join("report.csv")),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("#   seed = "));
        models.push(m.to_str().unwrap().to_string());
    }
    let com = d.join("committee.json");
    let o = run(&["committee", "--models", &models.join(","), "--out", p(&com)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    for model in [models[0].as_str(), p(&com)] {
        let o = run(&[
            "eval",
            "--model",
            model,
            "--data",
            p(&data),
            "--train-per-person",
            "4",
            "--det-out",
            p(&d.join("det.csv")),
            "--svg-out",
            p(&d.join("det.svg")),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("identification_rate") && stdout.contains("min_dcf"));
    }
    assert!(std::fs::read_to_string(d.join("det.svg"))
        .unwrap()
        .contains("<svg"));

    let config = d.join("exp.toml");
    std::fs::write(
        &config,
        "[experiment]\nruns = 3\nhidden = 4\ntrain-per-person = 4\nmsereg-epochs = 5\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for name in ["exp1", "exp2"] {
        let out = d.join(name);
        let o = run(&[
            "experiment",
            "--config",
            p(&config),
            "--data",
            p(&data),
            "--seed",
            "5",
            "--schemes",
            "a,b,c,d",
            "--jobs",
            "2",
            "--out",
            p(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("#   runs = 3"), "{stdout}");
        assert!(out.join("summary.csv").exists());
        outputs.push(out);
    }
    for scheme in ["a_mse", "b_msereg", "c_mse_committee", "d_msereg_committee"] {
        for f in [
            "records.csv",
            "histogram_ident.csv",
            "histogram_dcf.csv",
            "scatter.csv",
        ] {
            let a = std::fs::read(outputs[0].join(scheme).join(f)).unwrap();
            assert_eq!(a, std::fs::read(outputs[1].join(scheme).join(f)).unwrap());
        }
    }
    assert_eq!(
        std::fs::read(outputs[0].join("summary.csv")).unwrap(),
        std::fs::read(outputs[1].join("summary.csv")).unwrap()
    );
}
