//! Over-damped Langevin (Brownian) dynamics in the two toy potentials.
//!
//! Integration is forward Euler:
//! `x' = x - dt * grad U(x) / kT + sqrt(2 dt D) * w`, with `w` drawn from a
//! `ChaCha8Rng` seeded by `BDConfig::seed`. Normal variates come from
//! `rand_distr::StandardNormal` (ziggurat), so a seed yields the same
//! trajectory on every platform.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Trajectory;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialSpec {
    /// `U(x) = x^4 - 6x^2 + 2x` on the real line.
    DoubleWell1D,
    /// Radially symmetric folding funnel in five dimensions, `U` depends on
    /// `r = |x|` only:
    /// `-2.5 (r-3)^2` for `r < 3`, `0.5 (r-3)^3 - (r-3)^2` otherwise.
    RadialFolding5D,
}

impl PotentialSpec {
    pub fn dim(self) -> usize {
        match self {
            PotentialSpec::DoubleWell1D => 1,
            PotentialSpec::RadialFolding5D => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PotentialSpec::DoubleWell1D => "doublewell",
            PotentialSpec::RadialFolding5D => "folding5d",
        }
    }

    fn check_dim(self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "{} potential expects {} coordinates, got {}",
                self.name(),
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }
}

fn radial_energy(r: f64) -> f64 {
    let d = r - 3.0;
    if r < 3.0 {
        -2.5 * d * d
    } else {
        0.5 * d * d * d - d * d
    }
}

fn radial_derivative(r: f64) -> f64 {
    let d = r - 3.0;
    if r < 3.0 {
        -5.0 * d
    } else {
        1.5 * d * d - 2.0 * d
    }
}

pub fn potential_energy(spec: PotentialSpec, x: &[f64]) -> Result<f64> {
    spec.check_dim(x)?;
    Ok(match spec {
        PotentialSpec::DoubleWell1D => {
            let x = x[0];
            x.powi(4) - 6.0 * x * x + 2.0 * x
        }
        PotentialSpec::RadialFolding5D => radial_energy(norm(x)),
    })
}

pub fn potential_gradient(spec: PotentialSpec, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_dim(x)?;
    let mut g = vec![0.0; x.len()];
    gradient_into(spec, x, &mut g);
    Ok(g)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn gradient_into(spec: PotentialSpec, x: &[f64], out: &mut [f64]) {
    match spec {
        PotentialSpec::DoubleWell1D => {
            let x = x[0];
            out[0] = 4.0 * x.powi(3) - 12.0 * x + 2.0;
        }
        PotentialSpec::RadialFolding5D => {
            let r = norm(x);
            if r == 0.0 {
                out.iter_mut().for_each(|g| *g = 0.0);
                return;
            }
            let s = radial_derivative(r) / r;
            for (g, xi) in out.iter_mut().zip(x) {
                *g = s * xi;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BDConfig {
    pub dt: f64,
    pub diffusion: f64,
    pub kt: f64,
    pub n_steps: usize,
    pub x0: Vec<f64>,
    pub seed: u64,
    /// Steps integrated and discarded before the first recorded frame.
    pub burn_in: usize,
}

/// Thermal energy used by [`BDConfig::for_potential`] for the double well.
/// At `kT = 1` the left-well barrier is about 12.7 kT and a 5e4-step run at
/// `dt = 0.01` never leaves its starting basin.
pub const DOUBLE_WELL_KT: f64 = 3.0;
/// Thermal energy used by [`BDConfig::for_potential`] for the folding model.
pub const FOLDING_KT: f64 = 1.5;

impl BDConfig {
    /// Defaults: `dt = 0.01`, `D = 1`, no burn-in; the double well starts at
    /// `x = -1.7`, the folding model at `r = 3` on the first axis.
    pub fn for_potential(spec: PotentialSpec, n_steps: usize, seed: u64) -> Self {
        let (x0, kt) = match spec {
            PotentialSpec::DoubleWell1D => (vec![-1.7], DOUBLE_WELL_KT),
            PotentialSpec::RadialFolding5D => (vec![3.0, 0.0, 0.0, 0.0, 0.0], FOLDING_KT),
        };
        BDConfig {
            dt: 0.01,
            diffusion: 1.0,
            kt,
            n_steps,
            x0,
            seed,
            burn_in: 0,
        }
    }

    fn validate(&self, spec: PotentialSpec) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.diffusion > 0.0) || !(self.kt > 0.0) {
            return Err(Error::InvalidArgument(
                "diffusion and kT must be positive".into(),
            ));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
        }
        spec.check_dim(&self.x0)?;
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("x0 must be finite".into()));
        }
        Ok(())
    }
}

/// One Euler step with caller-supplied standard-normal noise.
pub fn bd_step(spec: PotentialSpec, cfg: &BDConfig, x: &mut [f64], noise: &[f64]) {
    let mut g = [0.0; 5];
    let g = &mut g[..x.len()];
    gradient_into(spec, x, g);
    let amp = (2.0 * cfg.dt * cfg.diffusion).sqrt();
    for ((xi, gi), wi) in x.iter_mut().zip(g.iter()).zip(noise) {
        *xi += -cfg.dt * gi / cfg.kt + amp * wi;
    }
}

/// Integrates `burn_in + n_steps` steps and records the state after each of
/// the last `n_steps`. The initial position itself is not recorded.
pub fn bd_trajectory(spec: PotentialSpec, cfg: &BDConfig) -> Result<Trajectory> {
    cfg.validate(spec)?;
    let dim = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = cfg.x0.clone();
    let mut noise = vec![0.0; dim];
    let mut frames = DMatrix::zeros(cfg.n_steps, dim);
    for step in 0..cfg.burn_in + cfg.n_steps {
        for w in noise.iter_mut() {
            *w = StandardNormal.sample(&mut rng);
        }
        bd_step(spec, cfg, &mut x, &noise);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        if step >= cfg.burn_in {
            frames
                .row_mut(step - cfg.burn_in)
                .copy_from(&DVector::from_column_slice(&x).transpose());
        }
    }
    Trajectory::new(frames, cfg.dt, format!("{} seed={}", spec.name(), cfg.seed))
}
