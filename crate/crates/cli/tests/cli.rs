//! End-to-end checks of the experiment runner and its report files.

use std::path::Path;
use std::process::Command;

use vampnet_cli::config::ExperimentConfig;
use vampnet_cli::experiment::run_experiment;
use vampnet_cli::report::{emit_report, parse_runs_csv, recompute_aggregate, ReportFormat};
use vampnet_cli::stats::aggregate_runs;

fn small_config(out: &Path, runs: usize, seed: u64) -> ExperimentConfig {
    let text = format!(
        r#"
[system]
kind = "doublewell"
n_steps = 4000

[topology]
layers = [1, 5, 5]

[training]
k = 4
epochs = 4
batch_size = 1000

[analysis]
its_lags = [1, 2, 3]
ck_n = [1, 2]
reference_bins = 50
trim = 0.0

[experiment]
runs = {runs}
master_seed = {seed}
workers = 2
output = "{}"
"#,
        out.display()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

#[test]
fn two_runs_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2, 1);
    let res = run_experiment(&cfg).unwrap();
    assert_eq!(res.summary.runs.len(), 2);
    for run in ["run_000", "run_001"] {
        for f in ["model.vnet", "its.csv", "ck.csv", "summary.json"] {
            assert!(dir.path().join(run).join(f).exists(), "{run}/{f}");
        }
    }
    let json = std::fs::read_to_string(dir.path().join("aggregate.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    let again: serde_json::Value = serde_json::from_str(&serde_json::to_string(&value).unwrap()).unwrap();
    assert_eq!(value, again);
    assert_eq!(value["units"]["timescales"], "frames");
    assert_eq!(value["config"]["experiment"]["runs"], 2);
    assert!(!json.contains("wall_time"));
    // one timescale row per (run, lag, index)
    let rows = parse_runs_csv(&std::fs::read_to_string(dir.path().join("runs.csv")).unwrap()).unwrap();
    let ts = rows.iter().filter(|r| r.metric == "timescale").count();
    assert_eq!(ts, 2 * 3);
}

#[test]
fn same_master_seed_same_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&small_config(a.path(), 3, 7)).unwrap();
    run_experiment(&small_config(b.path(), 3, 7)).unwrap();
    let read = |d: &Path, f: &str| std::fs::read_to_string(d.join(f)).unwrap();
    // the config echo holds the output path; compare everything else
    let strip = |d: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&read(d, "aggregate.json")).unwrap();
        v["config"]["experiment"]["output"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(a.path()), strip(b.path()));
    assert_eq!(read(a.path(), "runs.csv"), read(b.path(), "runs.csv"));
    assert_eq!(read(a.path(), "run_001/ck.csv"), read(b.path(), "run_001/ck.csv"));
}

#[test]
fn aggregate_recomputes_from_run_tables() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_experiment(&small_config(dir.path(), 4, 3)).unwrap();
    let again = recompute_aggregate(dir.path()).unwrap();
    assert_eq!(again.aggregate, res.summary.aggregate);

    // independent pass over runs.csv
    let rows = parse_runs_csv(&std::fs::read_to_string(dir.path().join("runs.csv")).unwrap()).unwrap();
    let mut vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.metric == "timescale" && r.lag == 2 && r.index == 0)
        .map(|r| r.value)
        .collect();
    vals.sort_by(f64::total_cmp);
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let agg = res.summary.aggregate.timescales.iter().find(|t| t.lag == 2).unwrap();
    let all = agg.stats.all.unwrap();
    assert_eq!(all.mean, mean);
    assert_eq!(all, aggregate_runs(&vals, 0.0, 0.95).unwrap());
}

#[test]
fn empty_summary_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_experiment(&small_config(dir.path(), 2, 5)).unwrap();
    let mut summary = res.summary;
    summary.runs.clear();
    let empty = tempfile::tempdir().unwrap();
    for format in [ReportFormat::Csv, ReportFormat::Json] {
        assert!(emit_report(&summary, format, empty.path()).is_err());
    }
    assert_eq!(std::fs::read_dir(empty.path()).unwrap().count(), 0);
}

#[test]
fn exit_codes() {
    let bin = env!("CARGO_BIN_EXE_vampnet");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[system]\nkind = \"doublewell\"\nbogus = 1\n").unwrap();
    let status = Command::new(bin)
        .args(["experiment", "--config"])
        .arg(&bad)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let missing = Command::new(bin)
        .args(["report", "--out"])
        .arg(dir.path().join("nothing"))
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(1));

    let good = dir.path().join("good.toml");
    let out = dir.path().join("out");
    let cfg = small_config(&out, 2, 1);
    std::fs::write(&good, toml::to_string(&cfg).unwrap()).unwrap();
    let status = Command::new(bin)
        .args(["experiment", "--runs", "2", "--config"])
        .arg(&good)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("aggregate.json").exists());
}
