//! Report files: per-run artifacts, the long-format run table and the
//! aggregate JSON.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use vampnet_core::koopman::CKResult;
use vampnet_core::network::write_checkpoint;

use crate::experiment::{
    aggregate, io_err, AggregateReport, BaselineScores, ExperimentError, RunOutcome, RunRecord, RunSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const RUNS_CSV: &str = "runs.csv";
pub const AGGREGATE_JSON: &str = "aggregate.json";
pub const TIMINGS_CSV: &str = "timings.csv";

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn run_dir(out: &Path, run: usize) -> PathBuf {
    out.join(format!("run_{run:03}"))
}

/// Long-format rows `metric,run,lag,index,value` for one run.
pub fn run_rows(r: &RunRecord, tau: usize, its_lags: &[usize], out: &mut String) {
    let mut row = |metric: &str, lag: usize, index: usize, value: f64| {
        let _ = writeln!(out, "{metric},{},{lag},{index},{value:?}", r.run);
    };
    row("completed", tau, 0, if r.error.is_none() { 1.0 } else { 0.0 });
    row("success", tau, 0, if r.success { 1.0 } else { 0.0 });
    if let Some(v) = r.validation_score {
        row("validation_score", tau, 0, v);
    }
    for (l, ts) in r.timescales.iter().enumerate() {
        for (i, &t) in ts.iter().enumerate() {
            row("timescale", its_lags[l], i, t);
        }
    }
    if let Some(v) = r.eigenfunction_correlation {
        row("eigenfunction_correlation", tau, 1, v);
    }
    if let Some(b) = &r.baseline_scores {
        row("two_state_score", tau, 0, b.two_state);
        row("reference_score", tau, 0, b.reference);
    }
}

pub const RUNS_HEADER: &str = "metric,run,lag,index,value\n";

/// Emits `runs.csv` (long format) or `aggregate.json`. An empty summary is
/// an error and leaves no file.
pub fn emit_report(summary: &RunSummary, format: ReportFormat, out: &Path) -> Result<PathBuf, ExperimentError> {
    if summary.runs.is_empty() {
        return Err(ExperimentError::Report("summary holds no runs".into()));
    }
    match format {
        ReportFormat::Csv => {
            let mut text = String::from(RUNS_HEADER);
            for r in &summary.runs {
                run_rows(r, summary.config.training.tau, &summary.config.analysis.its_lags, &mut text);
            }
            let path = out.join(RUNS_CSV);
            write_atomic(&path, text.as_bytes())?;
            Ok(path)
        }
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(summary)
                .map_err(|e| ExperimentError::Report(e.to_string()))?;
            let path = out.join(AGGREGATE_JSON);
            write_atomic(&path, text.as_bytes())?;
            Ok(path)
        }
    }
}

pub fn write_timings(summary: &RunSummary, out: &Path) -> Result<(), ExperimentError> {
    let mut text = String::from("run,wall_time_s\n");
    for r in &summary.runs {
        let _ = writeln!(text, "{},{:?}", r.run, r.wall_time_s);
    }
    write_atomic(&out.join(TIMINGS_CSV), text.as_bytes())
}

/// `lag,index,timescale_frames,timescale_time`
pub fn its_csv(record: &RunRecord, its_lags: &[usize], dt: f64) -> String {
    let mut text = String::from("lag,index,timescale_frames,timescale_time\n");
    for (l, ts) in record.timescales.iter().enumerate() {
        for (i, &t) in ts.iter().enumerate() {
            let _ = writeln!(text, "{},{i},{t:?},{:?}", its_lags[l], t * dt);
        }
    }
    text
}

/// `n,kind,i,j,value` with states in the model's own order.
pub fn ck_csv(ck: &CKResult) -> String {
    let mut text = String::from("n,kind,i,j,value\n");
    for (s, &n) in ck.n_values.iter().enumerate() {
        for (kind, m) in [("predicted", &ck.predicted[s]), ("estimated", &ck.estimated[s])] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    let _ = writeln!(text, "{n},{kind},{i},{j},{:?}", m[(i, j)]);
                }
            }
        }
    }
    text
}

pub fn write_run_artifacts(out: &Path, o: &RunOutcome, dt: f64, its_lags: &[usize]) -> Result<(), ExperimentError> {
    let dir = run_dir(out, o.record.run);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    if let Some(model) = &o.model {
        write_checkpoint(model, &dir.join("model.vnet"))?;
    }
    if o.record.error.is_none() {
        write_atomic(&dir.join("its.csv"), its_csv(&o.record, its_lags, dt).as_bytes())?;
    }
    if let Some(ck) = &o.ck {
        write_atomic(&dir.join("ck.csv"), ck_csv(ck).as_bytes())?;
    }
    let mut json = serde_json::to_value(&o.record).map_err(|e| ExperimentError::Report(e.to_string()))?;
    if let Some(rep) = &o.train_report {
        json["training"] = serde_json::json!({
            "train_scores": rep.train_scores,
            "validation_scores": rep.validation_scores,
            "learning_rates": rep.learning_rates,
            "lr_decays": rep.lr_decays,
            "best_epoch": rep.best_epoch,
        });
    }
    let text = serde_json::to_string_pretty(&json).map_err(|e| ExperimentError::Report(e.to_string()))?;
    write_atomic(&dir.join("summary.json"), text.as_bytes())
}

/// One parsed row of `runs.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub metric: String,
    pub run: usize,
    pub lag: usize,
    pub index: usize,
    pub value: f64,
}

pub fn parse_runs_csv(text: &str) -> Result<Vec<RunRow>, ExperimentError> {
    let mut lines = text.lines();
    if lines.next() != Some(RUNS_HEADER.trim_end()) {
        return Err(ExperimentError::Report("runs table has an unexpected header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            let bad = || ExperimentError::Report(format!("runs table line {}: {l:?}", n + 2));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(RunRow {
                metric: f[0].to_string(),
                run: f[1].parse().map_err(|_| bad())?,
                lag: f[2].parse().map_err(|_| bad())?,
                index: f[3].parse().map_err(|_| bad())?,
                value: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Rebuilds the aggregate-relevant part of each run record from `runs.csv`.
pub fn records_from_rows(rows: &[RunRow], its_lags: &[usize], its_count: usize) -> Result<Vec<RunRecord>, ExperimentError> {
    let n_runs = rows.iter().map(|r| r.run + 1).max().unwrap_or(0);
    let mut records: Vec<RunRecord> = (0..n_runs)
        .map(|run| RunRecord {
            run,
            split_seed: 0,
            train_seed: 0,
            error: Some("not completed".into()),
            validation_score: None,
            best_epoch: None,
            timescales: Vec::new(),
            model_timescales: Vec::new(),
            eigenfunction_correlation: None,
            baseline_scores: None,
            state_order: Vec::new(),
            success: false,
            wall_time_s: 0.0,
        })
        .collect();
    let mut two = vec![None; n_runs];
    let mut refs = vec![None; n_runs];
    for row in rows {
        let r = &mut records[row.run];
        match row.metric.as_str() {
            "completed" => {
                if row.value == 1.0 {
                    r.error = None;
                }
            }
            "success" => r.success = row.value == 1.0,
            "validation_score" => r.validation_score = Some(row.value),
            "eigenfunction_correlation" => r.eigenfunction_correlation = Some(row.value),
            "two_state_score" => two[row.run] = Some(row.value),
            "reference_score" => refs[row.run] = Some(row.value),
            "timescale" => {
                let l = its_lags
                    .iter()
                    .position(|&x| x == row.lag)
                    .ok_or_else(|| ExperimentError::Report(format!("lag {} not in the configured lags", row.lag)))?;
                if r.timescales.is_empty() {
                    r.timescales = vec![vec![f64::NAN; its_count]; its_lags.len()];
                }
                let slot = r
                    .timescales
                    .get_mut(l)
                    .and_then(|v| v.get_mut(row.index))
                    .ok_or_else(|| ExperimentError::Report(format!("timescale row out of range for run {}", row.run)))?;
                *slot = row.value;
            }
            other => return Err(ExperimentError::Report(format!("unknown metric {other:?}"))),
        }
    }
    for (r, (a, b)) in records.iter_mut().zip(two.into_iter().zip(refs)) {
        if let (Some(two_state), Some(reference)) = (a, b) {
            r.baseline_scores = Some(BaselineScores { two_state, reference });
        }
    }
    Ok(records)
}

pub fn parse_ck_csv(text: &str) -> Result<CKResult, ExperimentError> {
    let bad = |l: &str| ExperimentError::Report(format!("bad ck row {l:?}"));
    let mut entries: Vec<(usize, bool, usize, usize, f64)> = Vec::new();
    for l in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 5 {
            return Err(bad(l));
        }
        let kind = match f[1] {
            "predicted" => true,
            "estimated" => false,
            _ => return Err(bad(l)),
        };
        let p = |s: &str| s.parse::<usize>().map_err(|_| bad(l));
        entries.push((p(f[0])?, kind, p(f[2])?, p(f[3])?, f[4].parse().map_err(|_| bad(l))?));
    }
    let dim = entries.iter().map(|e| e.2.max(e.3) + 1).max().unwrap_or(0);
    let mut n_values: Vec<usize> = Vec::new();
    for e in &entries {
        if !n_values.contains(&e.0) {
            n_values.push(e.0);
        }
    }
    let mut predicted = vec![DMatrix::zeros(dim, dim); n_values.len()];
    let mut estimated = predicted.clone();
    for (n, kind, i, j, v) in entries {
        let s = n_values.iter().position(|&x| x == n).expect("collected above");
        if kind {
            predicted[s][(i, j)] = v;
        } else {
            estimated[s][(i, j)] = v;
        }
    }
    Ok(CKResult {
        tau: 0,
        n_values,
        predicted,
        estimated,
    })
}

/// Recomputes the aggregate of a finished experiment directory from its
/// `runs.csv` and the per-run `ck.csv` and `summary.json` files.
pub fn recompute_aggregate(dir: &Path) -> Result<RunSummary, ExperimentError> {
    let read = |p: PathBuf| std::fs::read_to_string(&p).map_err(io_err(&p));
    let json = read(dir.join(AGGREGATE_JSON))?;
    let mut summary: RunSummary = serde_json::from_str(&json).map_err(|e| ExperimentError::Report(e.to_string()))?;
    let cfg = &summary.config;
    let rows = parse_runs_csv(&read(dir.join(RUNS_CSV))?)?;
    let mut records = records_from_rows(&rows, &cfg.analysis.its_lags, cfg.analysis.its_count)?;
    let mut cks = Vec::with_capacity(records.len());
    for r in &mut records {
        let run = run_dir(dir, r.run);
        let ck_path = run.join("ck.csv");
        if r.error.is_some() || !ck_path.exists() {
            cks.push(None);
            continue;
        }
        let mut ck = parse_ck_csv(&read(ck_path)?)?;
        ck.tau = cfg.training.tau;
        let per_run: serde_json::Value = serde_json::from_str(&read(run.join("summary.json"))?)
            .map_err(|e| ExperimentError::Report(e.to_string()))?;
        r.state_order = serde_json::from_value(per_run["state_order"].clone())
            .map_err(|e| ExperimentError::Report(e.to_string()))?;
        cks.push(Some(ck));
    }
    let report: AggregateReport = aggregate(cfg, &records, &cks);
    summary.aggregate = report;
    summary.runs = records;
    Ok(summary)
}
