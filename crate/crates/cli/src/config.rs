//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vampnet_core::network::{build_topology, ScheduleGranularity, Topology, TrainConfig};
use vampnet_core::simulate::{BDConfig, PotentialSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Doublewell,
    Folding5d,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Featurization {
    None,
    /// Inputs are distances, mapped to `exp(-d)`.
    Contacts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    /// Simulation length; defaults to 50000 (double well) or 100000
    /// (folding model).
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
    pub kt: Option<f64>,
    pub diffusion: Option<f64>,
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub burn_in: usize,
    /// Trajectory files for `external` systems.
    #[serde(default)]
    pub paths: Vec<PathBuf>,
    #[serde(default = "default_featurization")]
    pub featurize: Featurization,
}

fn default_featurization() -> Featurization {
    Featurization::None
}

impl SystemConfig {
    pub fn potential(&self) -> Option<PotentialSpec> {
        match self.kind {
            SystemKind::Doublewell => Some(PotentialSpec::DoubleWell1D),
            SystemKind::Folding5d => Some(PotentialSpec::RadialFolding5D),
            SystemKind::External => None,
        }
    }

    /// Simulation settings with overrides applied.
    pub fn bd_config(&self, seed: u64) -> Option<BDConfig> {
        let spec = self.potential()?;
        let default_steps = match spec {
            PotentialSpec::DoubleWell1D => 50_000,
            PotentialSpec::RadialFolding5D => 100_000,
        };
        let mut bd = BDConfig::for_potential(spec, self.n_steps.unwrap_or(default_steps), seed);
        if let Some(v) = self.dt {
            bd.dt = v;
        }
        if let Some(v) = self.kt {
            bd.kt = v;
        }
        if let Some(v) = self.diffusion {
            bd.diffusion = v;
        }
        if let Some(v) = &self.x0 {
            bd.x0 = v.clone();
        }
        bd.burn_in = self.burn_in;
        Some(bd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// Explicit layer sizes; overrides the geometric rule.
    pub layers: Option<Vec<usize>>,
    pub n_out: Option<usize>,
    pub depth: Option<usize>,
    /// Per-hidden-layer dropout; default 10% on the first two.
    pub dropout: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Epoch,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub tau: usize,
    pub k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_patience: usize,
    pub lr_decay: f64,
    pub l2_hidden: f64,
    pub l2_output: f64,
    pub pretrain_fraction: f64,
    pub validation_fraction: f64,
    pub center_inputs: bool,
    pub schedule: Granularity,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            tau: 1,
            k: 1,
            batch_size: 4000,
            epochs: 100,
            lr0: 0.05,
            lr_patience: 10,
            lr_decay: 10.0,
            l2_hidden: 1e-7,
            l2_output: 1e-8,
            pretrain_fraction: 1.0 / 3.0,
            validation_fraction: 0.1,
            center_inputs: true,
            schedule: Granularity::Epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub its_lags: Vec<usize>,
    /// Number of slow processes reported per lag.
    pub its_count: usize,
    pub ck_n: Vec<usize>,
    /// Uniform bins of the reference MSM on the reaction coordinate; 0
    /// disables the reference.
    pub reference_bins: usize,
    pub trim: f64,
    pub ci_level: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            its_lags: (1..=10).collect(),
            its_count: 1,
            ck_n: (1..=5).collect(),
            reference_bins: 200,
            trim: 0.05,
            ci_level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuccessConfig {
    /// Minimum of the i-th slowest timescale at the model lag, in the
    /// trajectory's time units.
    pub min_timescales: Vec<f64>,
    /// Maximum relative deviation of the slowest timescale from the
    /// reference MSM at the largest analysis lag.
    pub reference_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub tica_cutoff: f64,
    pub kinetic_map: bool,
    pub clusters: Vec<usize>,
    pub kmeans_iter: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            tica_cutoff: 0.95,
            kinetic_map: true,
            clusters: vec![2, 5, 10, 50],
            kmeans_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub runs: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            runs: 100,
            master_seed: 0,
            workers: 1,
            output: PathBuf::from("vampnet-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub success: SuccessConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub experiment: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // relative trajectory paths are resolved against the config file
        if let Some(dir) = path.parent() {
            for p in &mut cfg.system.paths {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.system;
        if s.kind == SystemKind::External && s.paths.is_empty() {
            return invalid("external systems need at least one trajectory path");
        }
        if s.kind != SystemKind::External && !s.paths.is_empty() {
            return invalid("trajectory paths are only used by external systems");
        }
        if let Some(spec) = s.potential() {
            let bd = s.bd_config(0).expect("simulated system");
            if !(bd.dt > 0.0) || !(bd.kt > 0.0) || !(bd.diffusion > 0.0) || bd.n_steps == 0 {
                return invalid("dt, kt, diffusion and n_steps must be positive");
            }
            if bd.x0.len() != spec.dim() {
                return invalid(format!("x0 must have {} entries", spec.dim()));
            }
        }
        let t = &self.training;
        if t.tau == 0 {
            return invalid("training.tau must be at least 1");
        }
        if !(t.validation_fraction > 0.0 && t.validation_fraction < 1.0) {
            return invalid("training.validation_fraction must lie in (0, 1)");
        }
        self.train_config(0).map(|_| ())?;
        let topo = self.topology_for(self.input_dim().unwrap_or(1))?;
        if t.k == 0 || t.k > topo.n_out() {
            return invalid(format!("training.k must lie in 1..={}", topo.n_out()));
        }
        let a = &self.analysis;
        if a.its_lags.is_empty() || a.its_lags.contains(&0) {
            return invalid("analysis.its_lags must be nonempty and positive");
        }
        if a.its_count == 0 || a.its_count >= topo.n_out() {
            return invalid(format!(
                "analysis.its_count must lie in 1..{}",
                topo.n_out()
            ));
        }
        if a.ck_n.is_empty() || a.ck_n.contains(&0) {
            return invalid("analysis.ck_n must be nonempty and positive");
        }
        if !(0.0..0.5).contains(&a.trim) {
            return invalid("analysis.trim must lie in [0, 0.5)");
        }
        if !(a.ci_level > 0.0 && a.ci_level < 1.0) {
            return invalid("analysis.ci_level must lie in (0, 1)");
        }
        if let Some(tol) = self.success.reference_tolerance {
            if !(tol > 0.0) {
                return invalid("success.reference_tolerance must be positive");
            }
        }
        let b = &self.baseline;
        if !(b.tica_cutoff > 0.0 && b.tica_cutoff <= 1.0) || b.clusters.contains(&0) {
            return invalid("baseline.tica_cutoff must lie in (0, 1] and clusters be positive");
        }
        if self.experiment.runs == 0 || self.experiment.workers == 0 {
            return invalid("experiment.runs and experiment.workers must be positive");
        }
        Ok(())
    }

    /// Input width for simulated systems; `None` for external data, whose
    /// width is only known after reading it.
    pub fn input_dim(&self) -> Option<usize> {
        self.system.potential().map(|p| p.dim())
    }

    pub fn topology_for(&self, n_in: usize) -> Result<Topology, ConfigError> {
        let t = &self.topology;
        let layers = match (&t.layers, t.n_out, t.depth) {
            (Some(l), _, _) => build_topology(n_in, *l.last().unwrap_or(&0), l.len().saturating_sub(1), Some(l)),
            (None, Some(n_out), Some(depth)) => build_topology(n_in, n_out, depth, None),
            _ => return invalid("topology needs either layers or n_out and depth"),
        }
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if layers.n_in() != n_in {
            return invalid(format!(
                "topology input width {} does not match data width {n_in}",
                layers.n_in()
            ));
        }
        match &t.dropout {
            Some(d) => Topology::with_dropout(layers.layer_sizes.clone(), d.clone())
                .map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(layers),
        }
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig, ConfigError> {
        let t = &self.training;
        let mut c = TrainConfig::new(t.k, seed);
        c.batch_size = t.batch_size;
        c.epochs = t.epochs;
        c.lr0 = t.lr0;
        c.lr_patience = t.lr_patience;
        c.lr_decay = t.lr_decay;
        c.l2_hidden = t.l2_hidden;
        c.l2_output = t.l2_output;
        c.pretrain_fraction = t.pretrain_fraction;
        c.center_inputs = t.center_inputs;
        c.granularity = match t.schedule {
            Granularity::Epoch => ScheduleGranularity::Epoch,
            Granularity::Batch => ScheduleGranularity::Batch,
        };
        if c.batch_size < 2 || c.epochs == 0 || !(c.lr0 >= 0.0) || !(c.lr_decay > 0.0) || c.lr_patience == 0 {
            return invalid("training needs batch_size >= 2 and positive epochs, lr_patience and lr_decay");
        }
        if !(0.0..=1.0).contains(&c.pretrain_fraction) || c.l2_hidden < 0.0 || c.l2_output < 0.0 {
            return invalid("training.pretrain_fraction must lie in [0, 1] and l2 factors be nonnegative");
        }
        Ok(c)
    }
}
