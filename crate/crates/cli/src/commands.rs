//! Command-line entry points.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use vampnet_core::baseline::{kmeans, msm_estimate, msm_vamp2, tica_fit};
use vampnet_core::dataset::{lagged_pairs, split, write_trajectory, TrajectoryFormat};
use vampnet_core::koopman::{ck_from_features, featurize, implied_timescale, its_from_features};
use vampnet_core::network::{read_checkpoint, train, write_checkpoint};
use vampnet_core::numlin::general_eig;

use crate::config::ExperimentConfig;
use crate::experiment::{io_err, load_system, run_experiment, seed_plan, ExperimentError, SystemData};
use crate::report::{ck_csv, recompute_aggregate, write_atomic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vampnet", version, about = "Train and analyse VAMPnet kinetic models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate (or load) the configured system and write its trajectories.
    Simulate(Common),
    /// Train a single network, the first run of the experiment.
    Train(Common),
    /// Implied timescales of a trained model at the configured lags.
    Its {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Chapman-Kolmogorov test of a trained model.
    Cktest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// TICA, k-means and MSM baselines.
    Baseline(Common),
    /// The full multi-run protocol.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute the aggregate of a finished experiment from its run tables.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.experiment.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.experiment.output = out.clone();
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path, ExperimentError> {
    let out = cfg.experiment.output.as_path();
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    Ok(out)
}

fn system(cfg: &ExperimentConfig) -> Result<SystemData, ExperimentError> {
    load_system(cfg, seed_plan(cfg.experiment.master_seed, 1).simulation)
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Simulate(c) => simulate(&c),
        Command::Train(c) => train_one(&c),
        Command::Its { common, model } => its(&common, &model),
        Command::Cktest { common, model } => cktest(&common, &model),
        Command::Baseline(c) => baseline(&c),
        Command::Experiment { common, runs, workers } => experiment(&common, runs, workers),
        Command::Report { out } => report(&out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                ExperimentError::Config(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn simulate(common: &Common) -> Result<(), ExperimentError> {
    let cfg = load(common)?;
    let data = system(&cfg)?;
    let out = out_dir(&cfg)?;
    for (i, t) in data.trajs.iter().enumerate() {
        let path = out.join(format!("trajectory_{i:03}.vtrj"));
        write_trajectory(t, &path, TrajectoryFormat::Binary)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn train_one(common: &Common) -> Result<(), ExperimentError> {
    let cfg = load(common)?;
    let plan = seed_plan(cfg.experiment.master_seed, 1);
    let data = load_system(&cfg, plan.simulation)?;
    let out = out_dir(&cfg)?;
    let ds = lagged_pairs(&data.trajs, cfg.training.tau)?;
    let (split_seed, train_seed) = plan.runs[0];
    let split = split(&ds, cfg.training.validation_fraction, split_seed)?;
    let topology = cfg.topology_for(data.trajs[0].dim())?;
    let (model, rep) = train(&data.trajs, &ds, &split, &topology, &cfg.train_config(train_seed)?)?;
    write_checkpoint(&model, &out.join("model.vnet"))?;
    let mut text = String::from("epoch,train_score,validation_score,learning_rate\n");
    for e in 0..rep.validation_scores.len() {
        let _ = writeln!(
            text,
            "{e},{:?},{:?},{:?}",
            rep.train_scores[e], rep.validation_scores[e], rep.learning_rates[e]
        );
    }
    write_atomic(&out.join("training.csv"), text.as_bytes())?;
    println!("best epoch {} validation VAMP-2 {:.6}", rep.best_epoch, rep.final_validation_score);
    Ok(())
}

fn its(common: &Common, model: &Path) -> Result<(), ExperimentError> {
    let cfg = load(common)?;
    let data = system(&cfg)?;
    let out = out_dir(&cfg)?;
    let net = read_checkpoint(model)?;
    let features = featurize(&net, &data.trajs)?;
    let curve = its_from_features(&features, &cfg.analysis.its_lags, cfg.analysis.its_count)?;
    let dt = data.trajs[0].dt_per_frame;
    let mut text = String::from("lag,index,timescale_frames,timescale_time\n");
    for (lag, ts) in curve.lags.iter().zip(&curve.timescales) {
        for (i, t) in ts.iter().enumerate() {
            let _ = writeln!(text, "{lag},{i},{t:?},{:?}", t * dt);
        }
    }
    write_atomic(&out.join("its.csv"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn cktest(common: &Common, model: &Path) -> Result<(), ExperimentError> {
    let cfg = load(common)?;
    let data = system(&cfg)?;
    let out = out_dir(&cfg)?;
    let net = read_checkpoint(model)?;
    let features = featurize(&net, &data.trajs)?;
    let ck = ck_from_features(&features, cfg.training.tau, &cfg.analysis.ck_n)?;
    let text = ck_csv(&ck);
    write_atomic(&out.join("ck.csv"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn baseline(common: &Common) -> Result<(), ExperimentError> {
    let cfg = load(common)?;
    let data = system(&cfg)?;
    let out = out_dir(&cfg)?;
    let tau = cfg.training.tau;
    let b = &cfg.baseline;
    let tica = tica_fit(&data.trajs, tau, b.tica_cutoff, b.kinetic_map)?;
    let projected = featurize(&tica, &data.trajs)?;
    let total: usize = projected.iter().map(|p| p.nrows()).sum();
    let mut pooled = DMatrix::zeros(total, tica.retained_dim);
    let mut row = 0;
    for p in &projected {
        pooled.rows_mut(row, p.nrows()).copy_from(p);
        row += p.nrows();
    }
    let score_cfg = cfg.train_config(0)?.score_config();
    let mut text = String::from("clusters,metric,lag,index,value\n");
    for &k in &b.clusters {
        let km = kmeans(&pooled, k, cfg.experiment.master_seed, b.kmeans_iter)?;
        let mut dtrajs = Vec::with_capacity(projected.len());
        let mut start = 0;
        for p in &projected {
            dtrajs.push(km.assignments[start..start + p.nrows()].to_vec());
            start += p.nrows();
        }
        let _ = writeln!(text, "{k},vamp2,{tau},0,{:?}", msm_vamp2(&dtrajs, tau, &score_cfg)?);
        for &lag in &cfg.analysis.its_lags {
            let msm = msm_estimate(&dtrajs, lag)?;
            let eig = general_eig(&msm.transition_matrix, 0)?;
            for (i, &l) in eig.eigenvalues.iter().skip(1).take(cfg.analysis.its_count).enumerate() {
                let _ = writeln!(text, "{k},timescale,{lag},{i},{:?}", implied_timescale(l, lag as f64));
            }
        }
    }
    write_atomic(&out.join("baseline.csv"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn experiment(common: &Common, runs: Option<usize>, workers: Option<usize>) -> Result<(), ExperimentError> {
    let mut cfg = load(common)?;
    if let Some(r) = runs {
        cfg.experiment.runs = r;
    }
    if let Some(w) = workers {
        cfg.experiment.workers = w;
    }
    let result = run_experiment(&cfg)?;
    let a = &result.summary.aggregate;
    println!(
        "{} of {} runs completed, {} successful, output in {}",
        a.runs_completed,
        a.runs_total,
        a.runs_successful,
        cfg.experiment.output.display()
    );
    Ok(())
}

fn report(dir: &Path) -> Result<(), ExperimentError> {
    let summary = recompute_aggregate(dir)?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| ExperimentError::Report(e.to_string()))?;
    // a closed pipe (e.g. `| head`) is not an error
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}
