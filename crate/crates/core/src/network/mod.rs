//! The VAMPnet lobe: a fully connected network with ReLU hidden layers and a
//! Softmax output. Both lobes of a VAMPnet share one parameter set, so a
//! single [`NetworkModel`] represents `chi_0` and `chi_1` at once.

mod adam;
mod checkpoint;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use train::{
    train, PlateauSchedule, ScheduleGranularity, TrainConfig, TrainReport,
};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vampscore::{FeatureMap, GradientPair};

/// Layer widths `[n_in, hidden..., n_out]` and per-hidden-layer dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub layer_sizes: Vec<usize>,
    /// One rate per hidden layer, each in `[0, 1)`.
    pub dropout: Vec<f64>,
}

impl Topology {
    /// Explicit sizes with the default dropout: 10% on the first two hidden
    /// layers, none after.
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        let hidden = layer_sizes.len().saturating_sub(2);
        let dropout = (0..hidden).map(|i| if i < 2 { 0.1 } else { 0.0 }).collect();
        Self::with_dropout(layer_sizes, dropout)
    }

    pub fn with_dropout(layer_sizes: Vec<usize>, dropout: Vec<f64>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a network needs at least input and output layers, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must be positive: {layer_sizes:?}"
            )));
        }
        if dropout.len() != layer_sizes.len() - 2 {
            return Err(Error::InvalidArgument(format!(
                "{} dropout rates given for {} hidden layers",
                dropout.len(),
                layer_sizes.len() - 2
            )));
        }
        if dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "dropout rates must lie in [0, 1): {dropout:?}"
            )));
        }
        Ok(Topology {
            layer_sizes,
            dropout,
        })
    }

    pub fn n_in(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn without_dropout(&self) -> Self {
        Topology {
            layer_sizes: self.layer_sizes.clone(),
            dropout: vec![0.0; self.dropout.len()],
        }
    }
}

/// Layer widths with a constant reduction ratio `(n_in / n_out)^(1/depth)`
/// between consecutive layers, or the explicit list when one is given.
pub fn build_topology(
    n_in: usize,
    n_out: usize,
    depth: usize,
    explicit: Option<&[usize]>,
) -> Result<Topology> {
    if let Some(sizes) = explicit {
        return Topology::new(sizes.to_vec());
    }
    if depth == 0 || n_out == 0 || n_in < n_out {
        return Err(Error::InvalidArgument(format!(
            "rule-based topology needs n_in >= n_out >= 1 and depth >= 1 (got {n_in}, {n_out}, {depth})"
        )));
    }
    let ratio = (n_in as f64 / n_out as f64).powf(1.0 / depth as f64);
    let mut sizes = vec![n_in];
    for _ in 1..depth {
        let prev = *sizes.last().unwrap() as f64;
        sizes.push(((prev / ratio).round() as usize).max(1));
    }
    sizes.push(n_out);
    Topology::new(sizes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `n_out x n_in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub topology: Topology,
    pub layers: Vec<Layer>,
    /// Subtracted from every input row before the first layer.
    pub input_shift: DVector<f64>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active with masks drawn from the given seed.
    Train { dropout_seed: u64 },
    Infer,
}

/// Activations kept for back-propagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (post-dropout for hidden activations).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of each hidden layer.
    hidden_pre: Vec<DMatrix<f64>>,
    /// Inverted-dropout multipliers per hidden layer (`None` when inactive).
    masks: Vec<Option<DMatrix<f64>>>,
    pub output: DMatrix<f64>,
}

/// Parameter gradients, shaped like [`NetworkModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub layers: Vec<Layer>,
}

impl ParamGradients {
    pub fn zeros_like(model: &NetworkModel) -> Self {
        ParamGradients {
            layers: model
                .layers
                .iter()
                .map(|l| Layer {
                    weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &ParamGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn softmax_rows(z: &mut DMatrix<f64>) {
    for mut row in z.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row /= sum;
    }
}

fn affine(input: &DMatrix<f64>, layer: &Layer) -> DMatrix<f64> {
    let mut z = input * layer.weights.transpose();
    for mut row in z.row_iter_mut() {
        row += layer.bias.transpose();
    }
    z
}

impl NetworkModel {
    /// Fan-in scaled uniform initialization: variance `2/fan_in` for ReLU
    /// layers and `1/fan_in` for the Softmax layer; zero biases.
    pub fn init(topology: Topology, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = topology.depth();
        let layers = topology
            .layer_sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let var = if i + 1 == depth { 1.0 } else { 2.0 } / fan_in as f64;
                let a = (3.0 * var).sqrt();
                Layer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-a..a)),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        let n_in = topology.n_in();
        NetworkModel {
            topology,
            layers,
            input_shift: DVector::zeros(n_in),
            rng_seed: seed,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, batch: &DMatrix<f64>) -> Result<()> {
        if batch.ncols() != self.topology.n_in() {
            return Err(Error::Dimension(format!(
                "network expects {} input columns, got {}",
                self.topology.n_in(),
                batch.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping the intermediate activations.
    pub fn forward_cached(&self, batch: &DMatrix<f64>, mode: Mode) -> Result<ForwardCache> {
        self.check_input(batch)?;
        let mut rng = match mode {
            Mode::Train { dropout_seed } => Some(ChaCha8Rng::seed_from_u64(dropout_seed)),
            Mode::Infer => None,
        };
        let mut a = batch.clone();
        if self.input_shift.iter().any(|&s| s != 0.0) {
            for mut row in a.row_iter_mut() {
                row -= self.input_shift.transpose();
            }
        }
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut hidden_pre = Vec::with_capacity(depth - 1);
        let mut masks = Vec::with_capacity(depth - 1);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine(&a, layer);
            inputs.push(a);
            if i + 1 == depth {
                let mut out = z;
                softmax_rows(&mut out);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical("non-finite network output".into()));
                }
                return Ok(ForwardCache {
                    inputs,
                    hidden_pre,
                    masks,
                    output: out,
                });
            }
            let mut act = z.map(|v| v.max(0.0));
            let p = self.topology.dropout[i];
            let mask = match rng.as_mut() {
                Some(rng) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let m = DMatrix::from_fn(act.nrows(), act.ncols(), |_, _| {
                        if rng.random::<f64>() < p {
                            0.0
                        } else {
                            keep
                        }
                    });
                    act.component_mul_assign(&m);
                    Some(m)
                }
                _ => None,
            };
            hidden_pre.push(z);
            masks.push(mask);
            a = act;
        }
        unreachable!("topology has at least one layer")
    }

    pub fn forward(&self, batch: &DMatrix<f64>, mode: Mode) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(batch, mode)?.output)
    }

    /// Back-propagates `grad_output` (derivative of a scalar with respect to
    /// the Softmax outputs) to the parameters.
    pub fn backward_cached(&self, cache: &ForwardCache, grad_output: &DMatrix<f64>) -> ParamGradients {
        let mut grads = ParamGradients::zeros_like(self);
        let s = &cache.output;
        // Softmax Jacobian: dz = s * (g - <g, s>)
        let mut delta = grad_output.component_mul(s);
        for (mut row, srow) in delta.row_iter_mut().zip(s.row_iter()) {
            let dot: f64 = row.sum();
            row -= srow * dot;
        }
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            grads.layers[i].weights = delta.transpose() * input;
            grads.layers[i].bias = DVector::from_iterator(
                delta.ncols(),
                delta.column_iter().map(|c| c.sum()),
            );
            if i == 0 {
                break;
            }
            let mut d_prev = &delta * &self.layers[i].weights;
            if let Some(mask) = &cache.masks[i - 1] {
                d_prev.component_mul_assign(mask);
            }
            let pre = &cache.hidden_pre[i - 1];
            d_prev.zip_apply(pre, |d, z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
            delta = d_prev;
        }
        grads
    }

    /// Gradient of `-R + penalty` for shared lobes: the `t`-batch receives
    /// `-grad_x`, the lagged batch `-grad_y`, and both contributions are summed
    /// into one parameter gradient. The penalty is `l2 * ||W||^2` over weight
    /// matrices (hidden layers use `l2_hidden`, the output layer `l2_output`).
    pub fn backward(
        &self,
        cache_t: &ForwardCache,
        cache_tau: &ForwardCache,
        upstream: &GradientPair,
        l2_hidden: f64,
        l2_output: f64,
    ) -> Result<ParamGradients> {
        let n_out = self.topology.n_out();
        for (c, g) in [(cache_t, &upstream.grad_x), (cache_tau, &upstream.grad_y)] {
            if g.shape() != c.output.shape() || g.ncols() != n_out {
                return Err(Error::Dimension(format!(
                    "upstream gradient {:?} does not match outputs {:?}",
                    g.shape(),
                    c.output.shape()
                )));
            }
        }
        let mut total = self.backward_cached(cache_t, &(-&upstream.grad_x));
        total.add_assign(&self.backward_cached(cache_tau, &(-&upstream.grad_y)));
        self.add_l2_gradient(&mut total, l2_hidden, l2_output);
        Ok(total)
    }

    pub fn add_l2_gradient(&self, grads: &mut ParamGradients, l2_hidden: f64, l2_output: f64) {
        let last = self.layers.len() - 1;
        for (i, (g, l)) in grads.layers.iter_mut().zip(&self.layers).enumerate() {
            let lambda = if i == last { l2_output } else { l2_hidden };
            if lambda != 0.0 {
                g.weights += &l.weights * (2.0 * lambda);
            }
        }
    }

    pub fn l2_penalty(&self, l2_hidden: f64, l2_output: f64) -> f64 {
        let last = self.layers.len() - 1;
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let lambda = if i == last { l2_output } else { l2_hidden };
                lambda * l.weights.norm_squared()
            })
            .sum()
    }

    /// Parameters flattened layer by layer (weights row-major, then bias).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            for r in 0..l.weights.nrows() {
                out.extend(l.weights.row(r).iter());
            }
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for r in 0..l.weights.nrows() {
                for c in 0..l.weights.ncols() {
                    l.weights[(r, c)] = it.next().unwrap();
                }
            }
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }
}

impl ParamGradients {
    /// Same ordering as [`NetworkModel::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            for r in 0..l.weights.nrows() {
                out.extend(l.weights.row(r).iter());
            }
            out.extend(l.bias.iter());
        }
        out
    }
}

impl FeatureMap for NetworkModel {
    fn output_dim(&self) -> usize {
        self.topology.n_out()
    }

    fn transform(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.forward(frames, Mode::Infer)
    }
}
