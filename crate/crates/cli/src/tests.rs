use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::Value;

use super::{run, solve_report, Cli, Command, Failure};

fn parse(args: &[&str]) -> Result<Cli, Failure> {
    Cli::try_parse_from(std::iter::once("mmpareto").chain(args.iter().copied())).map_err(|e| Failure {
        code: e.exit_code() as u8,
        message: e.render().to_string(),
    })
}

fn exec(args: &[&str]) -> Result<(), Failure> {
    run(&parse(args)?)
}

fn exit_code(args: &[&str]) -> u8 {
    exec(args).err().map_or(0, |f| f.code)
}

fn ok(args: &[&str]) {
    if let Err(f) = exec(args) {
        panic!("{args:?} exited {}: {}", f.code, f.message);
    }
}

fn solve(args: &[&str]) -> Value {
    let mut full = vec!["solve"];
    full.extend_from_slice(args);
    match parse(&full).map(|c| c.command) {
        Ok(Command::Solve(a)) => solve_report(&a).unwrap_or_else(|f| panic!("{}", f.message)),
        _ => panic!("not a solve invocation"),
    }
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{"schema_version": 1, "train": {"epochs": 2, "eval_every": 50}}"#;

#[test]
fn solve_mmpareto_conflict_example() {
    let v = solve(&["--gm", "1,0", "--gu", "-1,2", "--strategy", "mmpareto", "--gamma", "1.5"]);
    let fg: Vec<f64> = serde_json::from_value(v["final_grad"].clone()).unwrap();
    let expect = 1.5 * 2.0 / 2f64.sqrt();
    assert!(fg.iter().all(|x| (x - expect).abs() < 1e-12), "{fg:?}");
    assert_eq!(v["case"], "conflict");
    assert!((v["lambda"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn solve_pareto_symmetric_and_stationary() {
    let v = solve(&["--gm", "1,0", "--gu", "0,1", "--strategy", "pareto"]);
    assert!((v["alpha_m"].as_f64().unwrap() - 0.5).abs() < 1e-15);
    let v = solve(&["--gm", "0,0", "--gu", "0,0"]);
    assert_eq!(v["case"], "stationary");
    assert_eq!(v["final_grad"], serde_json::json!([0.0, 0.0]));
}

#[test]
fn solve_reads_vectors_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("gm.json"), dir.path().join("gu.txt"));
    std::fs::write(&a, "[1, 0]").unwrap();
    std::fs::write(&b, "-1 2\n").unwrap();
    let v = solve(&["--gm-file", s(&a), "--gu-file", s(&b)]);
    assert_eq!(v["case"], "conflict");
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["solve", "--gm", "1,x", "--gu", "0,1"][..],
        &["solve", "--gm", "1,0", "--gu", "0,1,2"],
        &["solve", "--gm", "1,0"],
        &["solve", "--gm", "1,0", "--gu", "0,1", "--gamma", "0.5"],
        &["frobnicate"],
        &["stats", "--checkpoint", "/nonexistent/checkpoint.json"],
        &["landscape", "--checkpoint", "/nonexistent/checkpoint.json"],
    ] {
        assert_eq!(exit_code(args), 2, "{args:?}");
    }
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        r#"{"train": {"epochs": 1}}"#,
        r#"{"schema_version": 99}"#,
        r#"{"schema_version": 1, "bogus": true}"#,
        r#"{"schema_version": 1, "train": {"momentum": 1.5}}"#,
    ] {
        let cfg = write_config(dir.path(), body);
        assert_eq!(exit_code(&["train", "--config", &cfg, "--output-dir", s(dir.path())]), 2, "{body}");
    }
}

#[test]
fn help_on_every_subcommand() {
    for sub in ["solve", "train", "stats", "landscape"] {
        let f = exec(&[sub, "--help"]).unwrap_err();
        assert_eq!(f.code, 0);
        for flag in ["--seed", "--output-dir", "--dataset-cache"] {
            assert!(f.message.contains(flag), "{sub} help lacks {flag}");
        }
    }
    assert_eq!(exit_code(&["--help"]), 0);
}

#[test]
fn train_writes_outputs_and_seed_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    ok(&["train", "--config", &cfg, "--seeds", "5", "--output-dir", s(&out)]);
    let summary = read_json(&out.join("summary.json"));
    let metrics = summary["strategies"][0]["summary"]["metrics"].as_object().unwrap();
    assert!(!metrics.is_empty());
    for m in metrics.values() {
        assert!(m["mean"].is_number() && m["std"].is_number());
    }
    for i in 0..5 {
        let run = out.join("mmpareto").join(format!("seed_{i}"));
        for f in ["run.csv", "checkpoint.json", "dataset.json"] {
            assert!(run.join(f).is_file(), "{}", run.join(f).display());
        }
    }
}

#[test]
fn compare_writes_one_row_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (out, cache) = (dir.path().join("out"), dir.path().join("cache"));
    ok(&[
        "train",
        "--config",
        &cfg,
        "--compare",
        "uniform,pareto,mmpareto",
        "--seeds",
        "2",
        "--output-dir",
        s(&out),
        "--dataset-cache",
        s(&cache),
    ]);
    let rows = csv_rows(&out.join("summary.csv"));
    assert_eq!(rows.len(), 4);
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["uniform", "pareto", "mmpareto"]);
    // two seeds, one cached dataset (binary + sidecar) each, shared by all strategies
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 4);
}

#[test]
fn numerical_abort_exits_3_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"schema_version": 1, "train": {"epochs": 1, "eta": 1e300, "momentum": 0.0}}"#,
    );
    let f = exec(&["train", "--config", &cfg, "--output-dir", s(dir.path())]).unwrap_err();
    assert_eq!(f.code, 3, "{}", f.message);
    assert!(f.message.contains("diagnostics"), "{}", f.message);
    assert!(dir.path().join("diagnostics.json").is_file());
}

fn train_checkpoint(dir: &Path, epochs: usize, strategy: &str) -> PathBuf {
    let cfg = write_config(dir, &format!(r#"{{"schema_version": 1, "train": {{"epochs": {epochs}}}}}"#));
    ok(&["train", "--config", &cfg, "--strategy", strategy, "--output-dir", s(dir)]);
    dir.join("checkpoint.json")
}

#[test]
fn full_batch_stats_on_fresh_model_have_zero_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train_checkpoint(dir.path(), 0, "uniform");
    ok(&["stats", "--checkpoint", s(&ck), "--full-batch", "--n-batches", "3"]);
    let rows = csv_rows(&dir.path().join("grad_stats.csv"));
    assert_eq!(rows[0], ["encoder", "loss", "mean_magnitude", "cov_trace", "k_hat", "threshold"]);
    assert_eq!(rows.len(), 5);
    for r in &rows[1..] {
        assert_eq!(r[3].parse::<f64>().unwrap(), 0.0);
    }
    assert!(dir.path().join("magnitude_hist.csv").is_file());
}

#[test]
fn stats_on_trained_checkpoint_reports_k_hat_above_one() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train_checkpoint(dir.path(), 5, "uniform");
    ok(&["stats", "--checkpoint", s(&ck), "--seed", "1"]);
    let report = read_json(&dir.path().join("stats.json"));
    for e in report["encoders"].as_array().unwrap() {
        assert!(e["ratio"]["k_hat"].as_f64().unwrap() > 1.0, "{e}");
    }
}

#[test]
fn landscape_has_21_symmetric_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train_checkpoint(dir.path(), 1, "mmpareto");
    let scan_dir = dir.path().join("scan");
    let args = [
        "landscape",
        "--checkpoint",
        s(&ck),
        "--n-points",
        "21",
        "--radius",
        "0.5",
        "--output-dir",
        s(&scan_dir),
    ];
    ok(&args);
    let rows = csv_rows(&scan_dir.join("landscape.csv"));
    assert_eq!(rows[0], ["alpha", "loss", "accuracy"]);
    let alphas: Vec<f64> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(alphas.len(), 21);
    for i in 0..21 {
        assert_eq!(alphas[i], -alphas[20 - i]);
    }
    assert_eq!(alphas[0], -0.5);
    let first = std::fs::read(scan_dir.join("landscape.csv")).unwrap();
    ok(&args);
    assert_eq!(std::fs::read(scan_dir.join("landscape.csv")).unwrap(), first);
}

#[test]
fn oversized_radius_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train_checkpoint(dir.path(), 0, "uniform");
    assert_eq!(exit_code(&["landscape", "--checkpoint", s(&ck), "--radius", "1e305"]), 3);
}

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/asymmetric.json");
    let cfg = mmpareto::ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg, mmpareto::ExperimentConfig::default());
}
