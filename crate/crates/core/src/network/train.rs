use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Adam, AdamConfig, Mode, NetworkModel, Topology};
use crate::dataset::{shuffled_batches, LaggedDataset, SplitIndices, Trajectory};
use crate::error::{Error, Result};
use crate::numlin::DEFAULT_EPS_REL;
use crate::vampscore::{
    covariances, score_and_gradients, vamp2_score, FrobeniusScaling, ScoreConfig, ScoreKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleGranularity {
    /// One validation check per epoch.
    Epoch,
    /// One validation check per optimizer step.
    Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_patience: usize,
    pub lr_decay: f64,
    pub l2_hidden: f64,
    pub l2_output: f64,
    /// Share of epochs (from the start) trained on the VAMP-1 score.
    pub pretrain_fraction: f64,
    /// Singular values in the score.
    pub k: usize,
    pub seed: u64,
    pub eps_rel: f64,
    pub frobenius_scaling: FrobeniusScaling,
    pub granularity: ScheduleGranularity,
    /// Center `x_t` and `x_{t+tau}` inputs by their own dataset means.
    pub center_inputs: bool,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        TrainConfig {
            batch_size: 4000,
            epochs: 100,
            lr0: 0.05,
            lr_patience: 10,
            lr_decay: 10.0,
            l2_hidden: 1e-7,
            l2_output: 1e-8,
            pretrain_fraction: 1.0 / 3.0,
            k,
            seed,
            eps_rel: DEFAULT_EPS_REL,
            frobenius_scaling: FrobeniusScaling::Sum,
            granularity: ScheduleGranularity::Epoch,
            center_inputs: false,
            adam: AdamConfig::default(),
        }
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig {
            k: self.k,
            eps_rel: self.eps_rel,
            include_constant: true,
            frobenius_scaling: self.frobenius_scaling,
        }
    }

    pub fn pretrain_epochs(&self) -> usize {
        (self.pretrain_fraction * self.epochs as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.lr0 >= 0.0) || !(self.lr_decay > 0.0) {
            return bad("learning rate and decay must be nonnegative/positive");
        }
        if self.lr_patience == 0 {
            return bad("lr_patience must be positive");
        }
        if !(0.0..=1.0).contains(&self.pretrain_fraction) {
            return bad("pretrain_fraction must lie in [0, 1]");
        }
        if self.l2_hidden < 0.0 || self.l2_output < 0.0 {
            return bad("regularization factors must be nonnegative");
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    patience: usize,
    decay: f64,
    best: f64,
    stagnant: usize,
}

impl PlateauSchedule {
    pub fn new(lr0: f64, patience: usize, decay: f64) -> Self {
        PlateauSchedule {
            lr: lr0,
            patience,
            decay,
            best: f64::NEG_INFINITY,
            stagnant: 0,
        }
    }

    /// Records one validation score; returns `true` when the rate decayed.
    pub fn observe(&mut self, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.stagnant = 0;
            return false;
        }
        self.stagnant += 1;
        if self.stagnant >= self.patience {
            self.lr /= self.decay;
            self.stagnant = 0;
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Epoch mean of batch VAMP-2 scores (whatever the optimized objective).
    pub train_scores: Vec<f64>,
    /// Epoch mean of the optimized score (VAMP-1 while pre-training).
    pub objective_scores: Vec<f64>,
    pub phases: Vec<ScoreKind>,
    pub validation_scores: Vec<f64>,
    /// Rate in effect during each epoch.
    pub learning_rates: Vec<f64>,
    /// Epochs after which the rate decayed.
    pub lr_decays: Vec<usize>,
    pub best_epoch: usize,
    pub final_validation_score: f64,
    pub wall_time_s: f64,
    pub diverged_at_epoch: Option<usize>,
}

impl TrainReport {
    fn empty() -> Self {
        TrainReport {
            train_scores: Vec::new(),
            objective_scores: Vec::new(),
            phases: Vec::new(),
            validation_scores: Vec::new(),
            learning_rates: Vec::new(),
            lr_decays: Vec::new(),
            best_epoch: 0,
            final_validation_score: f64::NAN,
            wall_time_s: 0.0,
            diverged_at_epoch: None,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.diverged_at_epoch.is_none() && self.final_validation_score.is_finite()
    }
}

struct PairData {
    x: DMatrix<f64>,
    /// Lagged frames, pre-shifted so the model's own input shift centers them
    /// by their separate mean.
    y: DMatrix<f64>,
}

fn seeds(master: u64) -> (u64, u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (rng.next_u64(), rng.next_u64(), rng.next_u64())
}

fn merge_short_tail(mut batches: Vec<Vec<usize>>, batch_size: usize) -> Vec<Vec<usize>> {
    if batches.len() > 1 && batches.last().unwrap().len() * 2 < batch_size {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

fn val_score(model: &NetworkModel, data: &PairData, cfg: &ScoreConfig) -> Result<f64> {
    let a = model.forward(&data.x, Mode::Infer)?;
    let b = model.forward(&data.y, Mode::Infer)?;
    match vamp2_score(&covariances(&a, &b, true)?, cfg) {
        Err(Error::RankZero { .. }) => Ok(1.0),
        other => other,
    }
}

/// Trains shared-lobe VAMPnet parameters on the `train` pairs of `split` and
/// returns the parameters with the best validation VAMP-2 score.
///
/// The first `round(pretrain_fraction * epochs)` epochs maximize VAMP-1, the
/// remainder VAMP-2. Checkpoint selection only considers VAMP-2 epochs unless
/// there are none.
pub fn train(
    trajs: &[Trajectory],
    ds: &LaggedDataset,
    split: &SplitIndices,
    topology: &Topology,
    cfg: &TrainConfig,
) -> Result<(NetworkModel, TrainReport)> {
    cfg.validate()?;
    if split.train.len() < 2 || split.validation.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "train/validation sets have {}/{} pairs",
            split.train.len(),
            split.validation.len()
        )));
    }
    if trajs.is_empty() || trajs[0].dim() != topology.n_in() {
        return Err(Error::Dimension(format!(
            "network input width {} does not match data",
            topology.n_in()
        )));
    }
    if cfg.k == 0 || cfg.k > topology.n_out() {
        return Err(Error::InvalidArgument(format!(
            "k = {} must lie in 1..={}",
            cfg.k,
            topology.n_out()
        )));
    }
    let started = Instant::now();
    let (init_seed, batch_seed, dropout_seed) = seeds(cfg.seed);
    let mut model = NetworkModel::init(topology.clone(), init_seed);

    let d = topology.n_in();
    let y_offset = if cfg.center_inputs {
        let (x_all, y_all) = ds.gather_all(trajs);
        let mean = |m: &DMatrix<f64>| {
            DVector::from_iterator(d, m.column_iter().map(|c| c.mean()))
        };
        let (mu0, mu1) = (mean(&x_all), mean(&y_all));
        model.input_shift = mu0.clone();
        mu0 - mu1
    } else {
        DVector::zeros(d)
    };
    let gather = |idx: &[usize]| {
        let (x, mut y) = ds.gather(trajs, idx);
        if y_offset.iter().any(|&v| v != 0.0) {
            for mut row in y.row_iter_mut() {
                row += y_offset.transpose();
            }
        }
        PairData { x, y }
    };
    let validation = gather(&split.validation);
    let score_cfg = cfg.score_config();

    let mut adam = Adam::new(model.n_params(), cfg.adam);
    let mut schedule = PlateauSchedule::new(cfg.lr0, cfg.lr_patience, cfg.lr_decay);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(batch_seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let pretrain = cfg.pretrain_epochs();
    let mut report = TrainReport::empty();
    let mut best: Option<(f64, Vec<f64>, usize)> = None;

    for epoch in 0..cfg.epochs {
        let kind = if epoch < pretrain {
            ScoreKind::Vamp1
        } else {
            ScoreKind::Vamp2
        };
        let lr_at_start = schedule.lr;
        let batches = merge_short_tail(
            shuffled_batches(&split.train, cfg.batch_size, &mut batch_rng),
            cfg.batch_size,
        );
        let (mut sum_obj, mut sum_v2, mut n_batches) = (0.0, 0.0, 0usize);
        let mut last_val = f64::NAN;
        let mut decayed = false;
        for batch in &batches {
            if batch.len() < 2 {
                continue;
            }
            let data = gather(batch);
            let ca = model.forward_cached(&data.x, Mode::Train { dropout_seed: dropout_rng.next_u64() });
            let cb = model.forward_cached(&data.y, Mode::Train { dropout_seed: dropout_rng.next_u64() });
            let step = ca.and_then(|ca| {
                let cb = cb?;
                let (value, grads) = score_and_gradients(kind, &ca.output, &cb.output, &score_cfg)?;
                let v2 = if kind == ScoreKind::Vamp2 {
                    value
                } else {
                    vamp2_score(&covariances(&ca.output, &cb.output, true)?, &score_cfg)?
                };
                let pg = model.backward(&ca, &cb, &grads, cfg.l2_hidden, cfg.l2_output)?;
                Ok((value, v2, pg))
            });
            let (value, v2, pg) = match step {
                Ok(s) if s.0.is_finite() && s.2.max_abs().is_finite() => s,
                _ => {
                    report.diverged_at_epoch = Some(epoch);
                    report.wall_time_s = started.elapsed().as_secs_f64();
                    return Err(Error::TrainingDiverged {
                        epoch,
                        report: Box::new(report),
                    });
                }
            };
            adam.step(&mut model, &pg, schedule.lr);
            sum_obj += value;
            sum_v2 += v2;
            n_batches += 1;
            if cfg.granularity == ScheduleGranularity::Batch {
                last_val = val_score(&model, &validation, &score_cfg)?;
                decayed |= schedule.observe(last_val);
            }
        }
        if cfg.granularity == ScheduleGranularity::Epoch {
            last_val = val_score(&model, &validation, &score_cfg)?;
            decayed |= schedule.observe(last_val);
        }
        if !last_val.is_finite() {
            report.diverged_at_epoch = Some(epoch);
            report.wall_time_s = started.elapsed().as_secs_f64();
            return Err(Error::TrainingDiverged {
                epoch,
                report: Box::new(report),
            });
        }
        let n = n_batches.max(1) as f64;
        report.train_scores.push(sum_v2 / n);
        report.objective_scores.push(sum_obj / n);
        report.phases.push(kind);
        report.validation_scores.push(last_val);
        report.learning_rates.push(lr_at_start);
        if decayed {
            report.lr_decays.push(epoch);
        }

        let eligible = kind == ScoreKind::Vamp2 || pretrain >= cfg.epochs;
        if eligible && best.as_ref().is_none_or(|(b, _, _)| last_val > *b) {
            best = Some((last_val, model.flat_params(), epoch));
        }
    }

    let (best_val, params, best_epoch) = best.expect("at least one eligible epoch");
    model.set_flat_params(&params)?;
    report.best_epoch = best_epoch;
    report.final_validation_score = best_val;
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((model, report))
}
