//! The multi-run protocol: one simulated (or loaded) dataset, many training
//! runs with fresh splits and initializations, and per-run Koopman analysis.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vampnet_core::baseline::{crisp_vamp2, msm_estimate, uniform_bins};
use vampnet_core::dataset::{
    contact_transform, lagged_pairs, read_trajectory, split, LaggedDataset, SplitIndices, Trajectory,
    TrajectoryFormat,
};
use vampnet_core::koopman::{
    ck_bands, ck_from_features, estimate_k, featurize, implied_timescale, its_from_features,
    lagged_covariances, state_order, CKBands, CKResult, KoopmanModel,
};
use vampnet_core::network::{train, NetworkModel, TrainReport};
use vampnet_core::numlin::{general_eig, DEFAULT_EPS_REL};
use vampnet_core::simulate::{bd_trajectory, PotentialSpec};

use crate::config::{ConfigError, ExperimentConfig, Featurization};
use crate::stats::{aggregate_runs, median, pearson, Aggregate};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] vampnet_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("all {0} runs failed")]
    AllRunsFailed(usize),
    #[error("{0}")]
    Report(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Seeds derived from the master seed: one for the simulation and a
/// `(split, training)` pair per run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedPlan {
    pub simulation: u64,
    pub runs: Vec<(u64, u64)>,
}

pub fn seed_plan(master: u64, runs: usize) -> SeedPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    let simulation = rng.next_u64();
    let runs = (0..runs).map(|_| (rng.next_u64(), rng.next_u64())).collect();
    SeedPlan { simulation, runs }
}

/// Trajectories plus the scalar reaction coordinate of each frame, when one
/// is known (`x` for the double well, `|x|` for the folding model).
#[derive(Debug, Clone)]
pub struct SystemData {
    pub trajs: Vec<Trajectory>,
    pub coordinate: Option<Vec<Vec<f64>>>,
    /// Dividing surface of the crisp two-state model.
    pub two_state_threshold: Option<f64>,
}

pub fn load_system(cfg: &ExperimentConfig, simulation_seed: u64) -> Result<SystemData, ExperimentError> {
    match cfg.system.potential() {
        Some(spec) => {
            let bd = cfg.system.bd_config(simulation_seed).expect("simulated system");
            let traj = bd_trajectory(spec, &bd)?;
            let (coord, threshold): (Vec<f64>, f64) = match spec {
                PotentialSpec::DoubleWell1D => (traj.frames.column(0).iter().copied().collect(), 0.0),
                PotentialSpec::RadialFolding5D => (traj.frames.row_iter().map(|r| r.norm()).collect(), 3.0),
            };
            Ok(SystemData {
                trajs: vec![traj],
                coordinate: Some(vec![coord]),
                two_state_threshold: Some(threshold),
            })
        }
        None => {
            let mut trajs = Vec::new();
            for p in &cfg.system.paths {
                let mut t = read_trajectory(p, TrajectoryFormat::from_path(p))?;
                if cfg.system.featurize == Featurization::Contacts {
                    let mut out = DMatrix::zeros(t.len(), t.dim());
                    for (r, row) in t.frames.row_iter().enumerate() {
                        let c = contact_transform(&row.iter().copied().collect::<Vec<_>>())?;
                        out.row_mut(r).copy_from_slice(&c);
                    }
                    t = Trajectory::new(out, t.dt_per_frame, t.label.clone())?;
                }
                trajs.push(t);
            }
            Ok(SystemData {
                trajs,
                coordinate: None,
                two_state_threshold: None,
            })
        }
    }
}

/// Fine uniform-bin MSM on the reaction coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reference {
    pub n_bins: usize,
    pub lags: Vec<usize>,
    /// Slowest implied timescale (frames) at each lag.
    pub timescales: Vec<f64>,
    #[serde(skip)]
    pub bins: Vec<Vec<usize>>,
    /// Slowest nontrivial right eigenvector at the first lag, per frame.
    #[serde(skip)]
    pub eigenfunction: Vec<Vec<f64>>,
}

pub fn build_reference(coordinate: &[Vec<f64>], n_bins: usize, lags: &[usize]) -> Result<Reference, ExperimentError> {
    let all = coordinate.iter().flatten();
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let hi = hi + 1e-9 * (hi - lo).abs().max(1.0);
    let bins: Vec<Vec<usize>> = coordinate
        .iter()
        .map(|c| uniform_bins(c, lo, hi, n_bins))
        .collect::<Result<_, _>>()?;
    let mut timescales = Vec::with_capacity(lags.len());
    let mut eigenfunction = Vec::new();
    for (i, &tau) in lags.iter().enumerate() {
        let msm = msm_estimate(&bins, tau)?;
        let eig = general_eig(&msm.transition_matrix, if i == 0 { 2 } else { 0 })?;
        if eig.eigenvalues.len() < 2 {
            return Err(ExperimentError::Report("reference MSM has a single state".into()));
        }
        timescales.push(implied_timescale(eig.eigenvalues[1], tau as f64));
        if i == 0 {
            let mut index = vec![None; n_bins];
            for (k, &s) in msm.active_states.iter().enumerate() {
                index[s] = Some(k);
            }
            eigenfunction = bins
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|&s| index[s].map_or(f64::NAN, |k| eig.eigenvectors[(k, 1)].re))
                        .collect()
                })
                .collect();
        }
    }
    Ok(Reference {
        n_bins,
        lags: lags.to_vec(),
        timescales,
        bins,
        eigenfunction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    /// Validation VAMP-2 of the crisp two-state split at the threshold.
    pub two_state: f64,
    /// Validation VAMP-2 of the fine reference discretization.
    pub reference: f64,
}

/// Everything reported for one run; all numbers except `wall_time_s` are
/// determined by the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub split_seed: u64,
    pub train_seed: u64,
    pub error: Option<String>,
    pub validation_score: Option<f64>,
    pub best_epoch: Option<usize>,
    /// `timescales[l][i]` in frames at `its_lags[l]`.
    pub timescales: Vec<Vec<f64>>,
    /// Timescales of the model at the training lag, in frames.
    pub model_timescales: Vec<f64>,
    pub eigenfunction_correlation: Option<f64>,
    pub baseline_scores: Option<BaselineScores>,
    /// Koopman states ordered by their slowest-eigenvector weight.
    pub state_order: Vec<usize>,
    pub success: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub ck: Option<CKResult>,
    pub model: Option<NetworkModel>,
    pub train_report: Option<TrainReport>,
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a SystemData,
    ds: &'a LaggedDataset,
    reference: Option<&'a Reference>,
    two_state: Option<Vec<Vec<usize>>>,
}

/// Trains and analyses one run. Failures are recorded in the returned
/// record instead of being propagated.
fn run_one(shared: &Shared, run: usize, seeds: (u64, u64)) -> RunOutcome {
    let started = Instant::now();
    let mut record = RunRecord {
        run,
        split_seed: seeds.0,
        train_seed: seeds.1,
        error: None,
        validation_score: None,
        best_epoch: None,
        timescales: Vec::new(),
        model_timescales: Vec::new(),
        eigenfunction_correlation: None,
        baseline_scores: None,
        state_order: Vec::new(),
        success: false,
        wall_time_s: 0.0,
    };
    let mut outcome = RunOutcome {
        record: record.clone(),
        ck: None,
        model: None,
        train_report: None,
    };
    match analyse_run(shared, &mut record, seeds) {
        Ok((model, report, ck)) => {
            outcome.model = Some(model);
            outcome.train_report = Some(report);
            outcome.ck = Some(ck);
        }
        Err(e) => {
            record.error = Some(e.to_string());
            record.success = false;
        }
    }
    record.wall_time_s = started.elapsed().as_secs_f64();
    outcome.record = record;
    outcome
}

fn analyse_run(
    shared: &Shared,
    record: &mut RunRecord,
    seeds: (u64, u64),
) -> Result<(NetworkModel, TrainReport, CKResult), ExperimentError> {
    let cfg = shared.cfg;
    let trajs = &shared.data.trajs;
    let split = split(shared.ds, cfg.training.validation_fraction, seeds.0)?;
    let topology = cfg.topology_for(trajs[0].dim())?;
    let tc = cfg.train_config(seeds.1)?;
    let (model, report) = train(trajs, shared.ds, &split, &topology, &tc)?;
    record.validation_score = Some(report.final_validation_score);
    record.best_epoch = Some(report.best_epoch);

    let features = featurize(&model, trajs)?;
    let tau = cfg.training.tau;
    let koopman = estimate_k(&lagged_covariances(&features, tau, false)?, tau, DEFAULT_EPS_REL)?;
    record.state_order = state_order(&koopman);
    record.model_timescales = koopman.eigenvalues[1..=cfg.analysis.its_count]
        .iter()
        .map(|&l| implied_timescale(l, tau as f64))
        .collect();
    let its = its_from_features(&features, &cfg.analysis.its_lags, cfg.analysis.its_count)?;
    record.timescales = its.timescales;
    let ck = ck_from_features(&features, tau, &cfg.analysis.ck_n)?;

    if let Some(reference) = shared.reference {
        record.eigenfunction_correlation = Some(eigenfunction_correlation(&koopman, &features, reference));
    }
    if let (Some(two), Some(reference)) = (&shared.two_state, shared.reference) {
        let score_cfg = tc.score_config();
        let pairs = |d: &[Vec<usize>]| {
            let (from, to): (Vec<usize>, Vec<usize>) = split_pairs(shared.ds, &split)
                .map(|(traj, t)| (d[traj][t], d[traj][t + shared.ds.lag]))
                .unzip();
            (from, to)
        };
        let (f2, t2) = pairs(two);
        let (fr, tr) = pairs(&reference.bins);
        record.baseline_scores = Some(BaselineScores {
            two_state: crisp_vamp2(&f2, &t2, 2, &score_cfg)?,
            reference: crisp_vamp2(&fr, &tr, reference.n_bins, &score_cfg)?,
        });
    }
    record.success = judge_success(cfg, record, shared.reference, trajs[0].dt_per_frame);
    Ok((model, report, ck))
}

fn split_pairs<'a>(ds: &'a LaggedDataset, split: &'a SplitIndices) -> impl Iterator<Item = (usize, usize)> + 'a {
    split.validation.iter().map(move |&i| (ds.pairs[i].traj, ds.pairs[i].t))
}

/// `|corr|` between the slowest Koopman eigenfunction and the reference
/// eigenvector over all frames.
fn eigenfunction_correlation(model: &KoopmanModel, features: &[DMatrix<f64>], reference: &Reference) -> f64 {
    if model.dim() < 2 || model.eigenvalues[1].im != 0.0 {
        return f64::NAN;
    }
    let r: Vec<f64> = model.right_eigvecs.column(1).iter().map(|c| c.re).collect();
    let mut psi = Vec::new();
    let mut refv = Vec::new();
    for (f, e) in features.iter().zip(&reference.eigenfunction) {
        for (row, &v) in f.row_iter().zip(e) {
            if v.is_finite() {
                psi.push(row.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>());
                refv.push(v);
            }
        }
    }
    pearson(&psi, &refv).abs()
}

fn judge_success(cfg: &ExperimentConfig, record: &RunRecord, reference: Option<&Reference>, dt: f64) -> bool {
    let mins_ok = cfg
        .success
        .min_timescales
        .iter()
        .enumerate()
        .all(|(i, &min)| record.model_timescales.get(i).is_some_and(|&t| t * dt >= min));
    let reference_ok = match (cfg.success.reference_tolerance, reference) {
        (Some(tol), Some(r)) => {
            let last = record.timescales.last().and_then(|v| v.first()).copied();
            let want = r.timescales.last().copied();
            match (last, want) {
                (Some(got), Some(want)) if want.is_finite() && want > 0.0 => ((got - want) / want).abs() <= tol,
                _ => false,
            }
        }
        _ => true,
    };
    mins_ok && reference_ok
}

/// Statistics over runs, with and without failed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedAggregate {
    pub all: Option<Aggregate>,
    pub successful: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimescaleAggregate {
    pub lag: usize,
    pub index: usize,
    pub stats: PairedAggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkAggregate {
    pub n_values: Vec<usize>,
    pub runs: usize,
    /// Predicted and estimated bands overlap for every entry and every n.
    pub consistent: bool,
    pub worst_gap: f64,
    pub predicted_low: Vec<Vec<Vec<f64>>>,
    pub predicted_high: Vec<Vec<Vec<f64>>>,
    pub estimated_low: Vec<Vec<Vec<f64>>>,
    pub estimated_high: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs_total: usize,
    pub runs_completed: usize,
    pub runs_successful: usize,
    pub success_rate: f64,
    pub validation_score: PairedAggregate,
    pub timescales: Vec<TimescaleAggregate>,
    /// Slowest timescale: every lag's interval contains a common value.
    pub slowest_timescale_flat: Option<bool>,
    pub eigenfunction_correlation_median: Option<f64>,
    pub eigenfunction_correlation: PairedAggregate,
    pub two_state_score: PairedAggregate,
    pub reference_score: PairedAggregate,
    pub ck: Option<CkAggregate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Units {
    pub timescales: String,
    pub time_per_frame: f64,
    pub lags: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub units: Units,
    pub reference: Option<Reference>,
    pub aggregate: AggregateReport,
    #[serde(skip)]
    pub runs: Vec<RunRecord>,
}

fn paired(records: &[RunRecord], pick: impl Fn(&RunRecord) -> Option<f64>, trim: f64, level: f64) -> PairedAggregate {
    let all: Vec<f64> = records.iter().filter_map(&pick).collect();
    let ok: Vec<f64> = records.iter().filter(|r| r.success).filter_map(&pick).collect();
    PairedAggregate {
        all: aggregate_runs(&all, trim, level).ok(),
        successful: aggregate_runs(&ok, trim, level).ok(),
    }
}

fn nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn aggregate(
    cfg: &ExperimentConfig,
    records: &[RunRecord],
    cks: &[Option<CKResult>],
) -> AggregateReport {
    let (trim, level) = (cfg.analysis.trim, cfg.analysis.ci_level);
    let completed = records.iter().filter(|r| r.error.is_none()).count();
    let successful = records.iter().filter(|r| r.success).count();
    let mut timescales = Vec::new();
    for (l, &lag) in cfg.analysis.its_lags.iter().enumerate() {
        for index in 0..cfg.analysis.its_count {
            let stats = paired(records, |r| r.timescales.get(l).and_then(|v| v.get(index)).copied(), trim, level);
            timescales.push(TimescaleAggregate { lag, index, stats });
        }
    }
    let slowest: Vec<&Aggregate> = timescales
        .iter()
        .filter(|t| t.index == 0)
        .filter_map(|t| t.stats.all.as_ref())
        .collect();
    let slowest_timescale_flat = (slowest.len() == cfg.analysis.its_lags.len() && !slowest.is_empty()).then(|| {
        let max_low = slowest.iter().map(|a| a.ci_low).fold(f64::NEG_INFINITY, f64::max);
        let min_high = slowest.iter().map(|a| a.ci_high).fold(f64::INFINITY, f64::min);
        max_low <= min_high
    });
    let corr: Vec<f64> = records.iter().filter_map(|r| r.eigenfunction_correlation).collect();

    let with_ck: Vec<(&RunRecord, &CKResult)> = records
        .iter()
        .zip(cks)
        .filter_map(|(r, c)| c.as_ref().map(|c| (r, c)))
        .collect();
    let ck = (with_ck.len() >= 2)
        .then(|| {
            let results: Vec<CKResult> = with_ck.iter().map(|(_, c)| (*c).clone()).collect();
            let orders: Vec<Vec<usize>> = with_ck.iter().map(|(r, _)| r.state_order.clone()).collect();
            ck_bands(&results, &orders, level).ok()
        })
        .flatten()
        .map(|b: CKBands| CkAggregate {
            n_values: b.n_values.clone(),
            runs: with_ck.len(),
            consistent: b.consistent(),
            worst_gap: b.worst_gap(),
            predicted_low: b.predicted_lo.iter().map(nested).collect(),
            predicted_high: b.predicted_hi.iter().map(nested).collect(),
            estimated_low: b.estimated_lo.iter().map(nested).collect(),
            estimated_high: b.estimated_hi.iter().map(nested).collect(),
        });

    AggregateReport {
        runs_total: records.len(),
        runs_completed: completed,
        runs_successful: successful,
        success_rate: successful as f64 / records.len().max(1) as f64,
        validation_score: paired(records, |r| r.validation_score, trim, level),
        timescales,
        slowest_timescale_flat,
        eigenfunction_correlation_median: median(&corr),
        eigenfunction_correlation: paired(records, |r| r.eigenfunction_correlation, trim, level),
        two_state_score: paired(records, |r| r.baseline_scores.as_ref().map(|b| b.two_state), trim, level),
        reference_score: paired(records, |r| r.baseline_scores.as_ref().map(|b| b.reference), trim, level),
        ck,
    }
}

/// Output of [`run_experiment`] beyond the summary, kept for callers that
/// inspect individual runs.
pub struct ExperimentOutput {
    pub summary: RunSummary,
    pub outcomes: Vec<RunOutcome>,
    pub data: SystemData,
}

/// Runs the full protocol and writes every artifact under
/// `cfg.experiment.output`:
///
/// - `run_NNN/{model.vnet, its.csv, ck.csv, summary.json}` per run
/// - `runs.csv` (long format) and `aggregate.json`
/// - `timings.csv`, the only file holding wall-clock times
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let out = &cfg.experiment.output;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let plan = seed_plan(cfg.experiment.master_seed, cfg.experiment.runs);
    let data = load_system(cfg, plan.simulation)?;
    if data.trajs.is_empty() {
        return Err(ExperimentError::Report("no trajectories".into()));
    }
    cfg.topology_for(data.trajs[0].dim())?;
    let ds = lagged_pairs(&data.trajs, cfg.training.tau)?;
    let reference = match (&data.coordinate, cfg.analysis.reference_bins) {
        (Some(c), n) if n > 0 => Some(build_reference(c, n, &cfg.analysis.its_lags)?),
        _ => None,
    };
    let two_state = match (&data.coordinate, data.two_state_threshold) {
        (Some(c), Some(th)) => Some(
            c.iter()
                .map(|v| v.iter().map(|&x| usize::from(x > th)).collect())
                .collect(),
        ),
        _ => None,
    };
    let shared = Shared {
        cfg,
        data: &data,
        ds: &ds,
        reference: reference.as_ref(),
        two_state,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.workers)
        .build()
        .map_err(|e| ExperimentError::Report(e.to_string()))?;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        plan.runs
            .par_iter()
            .enumerate()
            .map(|(i, &seeds)| run_one(&shared, i, seeds))
            .collect()
    });
    for o in &outcomes {
        crate::report::write_run_artifacts(out, o, data.trajs[0].dt_per_frame, &cfg.analysis.its_lags)?;
    }
    let records: Vec<RunRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let cks: Vec<Option<CKResult>> = outcomes.iter().map(|o| o.ck.clone()).collect();
    let summary = RunSummary {
        config: cfg.clone(),
        master_seed: cfg.experiment.master_seed,
        units: Units {
            timescales: "frames".into(),
            time_per_frame: data.trajs[0].dt_per_frame,
            lags: "frames".into(),
        },
        reference,
        aggregate: aggregate(cfg, &records, &cks),
        runs: records,
    };
    crate::report::emit_report(&summary, crate::report::ReportFormat::Json, out)?;
    crate::report::emit_report(&summary, crate::report::ReportFormat::Csv, out)?;
    crate::report::write_timings(&summary, out)?;
    if summary.aggregate.runs_completed == 0 {
        return Err(ExperimentError::AllRunsFailed(summary.runs.len()));
    }
    Ok(ExperimentOutput {
        summary,
        outcomes,
        data,
    })
}
