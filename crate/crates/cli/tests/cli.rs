use std::path::Path;
use std::process::{Command, Output};

use cosr_core::harness::{read_records_csv, DatasetConfig, ExperimentConfig, Summary};

fn cosr(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_cosr"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "cosr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY: &str = r#"
name = "tiny"
seeds = [0, 1]

[deployment]
n_sensors = 16
n_caches = 4
window = 2
horizon = 3

[sweep]
kind = "compression"
m = [2, 4]
q = 3
strategy = "pairwise-union"
"#;

fn head(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn print_config_emits_parseable_defaults() {
    let text = stdout(&cosr(&["sweep", "--print-config"]));
    assert_eq!(
        ExperimentConfig::from_toml_str(&text).unwrap(),
        ExperimentConfig::default()
    );
    let text = stdout(&cosr(&["generate", "dataset", "--print-config"]));
    assert_eq!(
        DatasetConfig::from_toml_str(&text).unwrap(),
        DatasetConfig::default()
    );
    let text = stdout(&cosr(&["solve", "--print-config"]));
    assert_eq!(
        ExperimentConfig::from_toml_str(&text).unwrap(),
        ExperimentConfig::default()
    );
}

#[test]
fn generate_field_writes_csv_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("field");
    cosr(&[
        "generate",
        "field",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        head(&out.join("sensors.csv")),
        "sensor,block_row,block_col,x,y"
    );
    assert_eq!(head(&out.join("sources.csv")), "t,source,smooth,jump,value");
    assert_eq!(head(&out.join("observations.csv")), "t,sensor,value");
    assert_eq!(head(&out.join("coverage.csv")), "cache,sensor");
    let rows = std::fs::read_to_string(out.join("observations.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 100 * 20);
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let results = dir.path().join("results");
    cosr(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        results.to_str().unwrap(),
    ]);

    let records = read_records_csv(std::fs::File::open(results.join("tiny.csv")).unwrap()).unwrap();
    assert_eq!(records.len(), 2 * 2 * 5);
    let summary: Summary =
        serde_json::from_str(&std::fs::read_to_string(results.join("tiny.summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary.curves.len(), 5);
    assert!(summary
        .curves
        .iter()
        .all(|c| c.points.len() == 2 && c.points[0].seeds == 2));

    let json = stdout(&cosr(&[
        "report",
        results.join("tiny.csv").to_str().unwrap(),
    ]));
    assert_eq!(serde_json::from_str::<Summary>(&json).unwrap(), summary);
    let csv = stdout(&cosr(&[
        "report",
        results.join("tiny.csv").to_str().unwrap(),
        "--format",
        "csv",
    ]));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,point,x,m,q,strategy,mean_nmse,std_nmse,seeds"
    );
    assert_eq!(lines.count(), 10);
}

#[test]
fn solve_writes_trace_and_message_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let trace = dir.path().join("trace.csv");
    let msgs = dir.path().join("messages.csv");
    let out = cosr(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--m",
        "3",
        "--q",
        "4",
        "--trace",
        trace.to_str().unwrap(),
        "--messages",
        msgs.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let iterations = v["iterations"].as_u64().unwrap() as usize;
    assert!(v["nmse"].as_f64().unwrap() >= 0.0);
    assert_eq!(
        v["comm"]["scalars"].as_u64().unwrap() as usize,
        iterations * 12 * 4 * 2
    );
    assert_eq!(v["comm"]["reduction_ratio"].as_f64().unwrap(), 4.0);
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(trace_text.lines().count(), iterations + 1);
    assert!(trace_text.starts_with("iteration,primal,dual,rho,nmse_0"));
    assert_eq!(
        head(&msgs),
        "round,sender,receiver,scalars,total_messages,total_scalars"
    );
    let log_rows = std::fs::read_to_string(&msgs).unwrap().lines().count();
    assert_eq!(log_rows, 1 + iterations * 12);
}

#[test]
fn generate_dataset_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("data.toml");
    std::fs::write(
        &cfg,
        "n_deployments = 2\nm = 3\nq = 4\n[split]\ntrain = 1.0\nval = 0.0\ntest = 0.0\n[deployment]\nn_sensors = 16\nhorizon = 10\n",
    )
    .unwrap();
    let out = dir.path().join("ds");
    let text = stdout(&cosr(&[
        "generate",
        "dataset",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(text.contains("train: 14 samples"));
    assert!(out.join("manifest.json").exists());
    assert_eq!(
        std::fs::read_to_string(out.join("train.jsonl"))
            .unwrap()
            .lines()
            .count(),
        14
    );
}

#[test]
fn bad_input_fails_cleanly() {
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_cosr"))
            .args(args)
            .output()
            .unwrap()
    };
    let out = run(&["solve", "--method", "bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method"));
    let out = run(&["sweep", "--config", "/nonexistent/config.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/config.toml"));
}
