use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_r3l");

const FIXTURE: &str = r#"
[data]
synthetic = "random_walk"
synthetic_assets = 2
synthetic_weeks = 800

[network]
window = 8
hidden = 8
quantiles = 8

[learner]
alpha = 0.875
updates = 60
eval_interval = 30
log_interval = 10
checkpoint_interval = 30
"#;

fn r3l(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_then_backtest_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FIXTURE);
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();

    let t = r3l(&["train", "--config", &cfg, "--seed", "3", "--out-dir", out_s]);
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    for f in ["manifest.txt", "training_log.csv", "checkpoint_30", "checkpoint_60"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 3") && manifest.contains("config_sha256 = "));

    let ckpt = out.join("checkpoint_60");
    let b = r3l(&["backtest", "--config", &cfg, "--seed", "3", "--out-dir", out_s, "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("strategy,TR,SD,SR1,VaR,SR2,AT\n"));
    for s in ["BH", "SH", "RN", "MV", "R3L"] {
        assert!(metrics.lines().any(|l| l.starts_with(&format!("{s},"))), "no {s} row in\n{metrics}");
    }
    for s in ["BH", "SH", "R3L"] {
        assert!(out.join(format!("equity_{s}.csv")).is_file());
    }
}

#[test]
fn backtest_without_checkpoint_reports_benchmarks_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FIXTURE);
    let out = tmp.path().join("bench");
    let b = r3l(&["backtest", "--config", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(b.status.success());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.contains("\nBH,") && !metrics.contains("R3L"));
}

#[test]
fn single_actor_runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), FIXTURE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert!(r3l(&["train", "--config", &cfg, "--out-dir", d.to_str().unwrap()]).status.success());
    }
    for f in ["training_log.csv", "checkpoint_60", "manifest.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn exit_codes_name_the_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out_s = out.to_str().unwrap();

    let bad = write_config(tmp.path(), "[learner]\nalphaa = 0.9\n");
    let r = r3l(&["train", "--config", &bad, "--out-dir", out_s]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("alphaa"));

    let n117 = write_config(tmp.path(), "[network]\nquantiles = 117\n");
    let r = r3l(&["train", "--config", &n117, "--out-dir", out_s]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("learner.alpha"));

    let cfg = write_config(tmp.path(), FIXTURE);
    let r = r3l(&["backtest", "--config", &cfg, "--out-dir", out_s, "--checkpoint", "/nonexistent/ckpt"]);
    assert_eq!(r.status.code(), Some(3));

    assert_eq!(r3l(&["train", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let r = r3l(&["gradcheck", "--seed", "11"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stdout));
    assert!(!String::from_utf8_lossy(&r.stdout).contains("FAILED"));
}
