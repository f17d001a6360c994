//! Classical pipeline for comparison: TICA, k-means, count-based MSMs and
//! the VAMP-2 score of crisp discretizations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::koopman::lagged_covariances;
use crate::numlin::{self, DEFAULT_EPS_REL};
use crate::vampscore::{covariances, vamp2_score, CovarianceSet, FeatureMap, ScoreConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TICAModel {
    pub mean: DVector<f64>,
    /// `d x retained_dim`, columns are TICA eigenvectors.
    pub components: DMatrix<f64>,
    /// All eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
    pub retained_dim: usize,
    pub kinetic_map: bool,
    pub lag: usize,
}

/// TICA on symmetrized mean-free covariances, keeping the smallest number of
/// components whose share of `sum lambda_i^2` reaches `variance_cutoff`.
pub fn tica_fit(trajs: &[Trajectory], tau: usize, variance_cutoff: f64, kinetic_map: bool) -> Result<TICAModel> {
    if !(variance_cutoff > 0.0 && variance_cutoff <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance cutoff {variance_cutoff} outside (0, 1]"
        )));
    }
    let frames: Vec<DMatrix<f64>> = trajs.iter().map(|t| t.frames.clone()).collect();
    let raw = lagged_covariances(&frames, tau, false)?;
    let n = raw.t_pairs as f64;
    let mean = (&raw.mean0 + &raw.mean1) * 0.5;
    // central moments of the pooled (x_t, x_{t+tau}) sample
    let outer = &mean * mean.transpose();
    let c0 = (&raw.c00 + &raw.c11) * 0.5 - &outer;
    let ct = (&raw.c01 + raw.c01.transpose()) * 0.5 - &outer;
    let c0 = c0 * (n / (n - 1.0).max(1.0));
    let ct = ct * (n / (n - 1.0).max(1.0));

    let w = numlin::inv_sqrt_named(&c0, DEFAULT_EPS_REL, "C0")?;
    let eig = numlin::sym_eig(&(&w.matrix * ct * &w.matrix))?;
    let rank = w.rank;
    let eigenvalues = eig.eigenvalues.rows(0, rank).into_owned();
    let total: f64 = eigenvalues.iter().map(|l| l * l).sum();
    let retained_dim = if variance_cutoff >= 1.0 || total == 0.0 {
        rank
    } else {
        let mut acc = 0.0;
        let mut r = rank;
        for (i, l) in eigenvalues.iter().enumerate() {
            acc += l * l;
            if acc / total >= variance_cutoff {
                r = i + 1;
                break;
            }
        }
        r
    };
    let components = &w.matrix * eig.eigenvectors.columns(0, retained_dim);
    Ok(TICAModel {
        mean,
        components,
        eigenvalues,
        retained_dim,
        kinetic_map,
        lag: tau,
    })
}

impl FeatureMap for TICAModel {
    fn output_dim(&self) -> usize {
        self.retained_dim
    }

    fn transform(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if frames.ncols() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "TICA expects {} columns, got {}",
                self.mean.len(),
                frames.ncols()
            )));
        }
        let mut centered = frames.clone();
        for (mut col, m) in centered.column_iter_mut().zip(self.mean.iter()) {
            col.add_scalar_mut(-m);
        }
        let mut proj = centered * &self.components;
        if self.kinetic_map {
            for (mut col, l) in proj.column_iter_mut().zip(self.eigenvalues.iter()) {
                col *= *l;
            }
        }
        Ok(proj)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k x d`
    pub centers: DMatrix<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|j| (points[(i, j)] - centers[(c, j)]).powi(2))
        .sum()
}

/// Index of the nearest center for every row of `points`.
pub fn assign(centers: &DMatrix<f64>, points: &DMatrix<f64>) -> Result<Vec<usize>> {
    if centers.ncols() != points.ncols() {
        return Err(Error::Dimension(format!(
            "centers have {} columns, points {}",
            centers.ncols(),
            points.ncols()
        )));
    }
    Ok((0..points.nrows())
        .map(|i| nearest(points, i, centers).0)
        .collect())
}

fn nearest(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.nrows() {
        let d = sq_dist(points, i, centers, c);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from greedy farthest-point seeding. The first center is
/// drawn from `seed`; an empty cluster is re-seeded with the point farthest
/// from its current center.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {n} points")));
    }
    let d = points.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = DMatrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&points.row(first));
    let mut min_d: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centers, 0)).collect();
    for c in 1..k {
        let (far, dist) = min_d
            .iter()
            .copied()
            .enumerate()
            .fold((0, -1.0), |b, (i, v)| if v > b.1 { (i, v) } else { b });
        if dist <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "fewer than {k} distinct points"
            )));
        }
        centers.row_mut(c).copy_from(&points.row(far));
        for (i, m) in min_d.iter_mut().enumerate() {
            *m = m.min(sq_dist(points, i, &centers, c));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    for it in 0..max_iter.max(1) {
        iterations = it + 1;
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, dist) = nearest(points, i, &centers);
            dists[i] = dist;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = DMatrix::zeros(k, d);
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            row += points.row(i);
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .ok_or_else(|| Error::Numerical("k-means cannot repair an empty cluster".into()))?;
                counts[assignments[far]] -= 1;
                let mut row = sums.row_mut(assignments[far]);
                row -= points.row(far);
                assignments[far] = c;
                counts[c] = 1;
                sums.row_mut(c).copy_from(&points.row(far));
                dists[far] = 0.0;
                changed = true;
            }
        }
        for c in 0..k {
            let row = sums.row(c) / counts[c] as f64;
            centers.row_mut(c).copy_from(&row);
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n)
        .map(|i| sq_dist(points, i, &centers, assignments[i]))
        .sum();
    Ok(KMeans {
        centers,
        assignments,
        inertia,
        iterations,
    })
}

/// Bin index of each value on a uniform grid of `n_bins` over `[lo, hi]`;
/// values outside are clamped to the edge bins.
pub fn uniform_bins(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> Result<Vec<usize>> {
    if n_bins == 0 || !(hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "invalid grid [{lo}, {hi}] with {n_bins} bins"
        )));
    }
    let width = (hi - lo) / n_bins as f64;
    Ok(values
        .iter()
        .map(|&v| (((v - lo) / width).floor().max(0.0) as usize).min(n_bins - 1))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MSMModel {
    pub transition_matrix: DMatrix<f64>,
    pub state_count: usize,
    pub lag: usize,
    /// Original label of each retained state.
    pub active_states: Vec<usize>,
}

/// Transition counts at lag `tau` over all trajectories; `n` is one more
/// than the largest label.
pub fn count_matrix(dtrajs: &[Vec<usize>], tau: usize) -> Result<DMatrix<f64>> {
    if tau == 0 {
        return Err(Error::InvalidArgument("lag must be at least 1".into()));
    }
    let n = dtrajs.iter().flatten().copied().max().map_or(0, |m| m + 1);
    let mut c = DMatrix::zeros(n, n);
    for d in dtrajs {
        for t in 0..d.len().saturating_sub(tau) {
            c[(d[t], d[t + tau])] += 1.0;
        }
    }
    Ok(c)
}

/// Row-normalized count matrix. States with no outgoing counts are removed
/// (together with transitions into them) until every row is nonempty.
pub fn msm_estimate(dtrajs: &[Vec<usize>], tau: usize) -> Result<MSMModel> {
    let counts = count_matrix(dtrajs, tau)?;
    let mut active: Vec<usize> = (0..counts.nrows()).collect();
    loop {
        let keep: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| active.iter().any(|&j| counts[(i, j)] > 0.0))
            .collect();
        if keep.len() == active.len() {
            break;
        }
        active = keep;
    }
    if active.is_empty() {
        return Err(Error::EmptyDataset(format!("no transitions at lag {tau}")));
    }
    let n = active.len();
    let mut p = DMatrix::from_fn(n, n, |i, j| counts[(active[i], active[j])]);
    for mut row in p.row_iter_mut() {
        let s: f64 = row.iter().sum();
        row /= s;
    }
    Ok(MSMModel {
        transition_matrix: p,
        state_count: n,
        lag: tau,
        active_states: active,
    })
}

/// Indicator features of a discrete trajectory.
pub fn one_hot(dtraj: &[usize], n_states: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dtraj.len(), n_states);
    for (t, &s) in dtraj.iter().enumerate() {
        out[(t, s)] = 1.0;
    }
    out
}

/// VAMP-2 score of crisp indicator features at lag `tau`. The number of
/// scored singular values is capped at the number of states.
pub fn msm_vamp2(dtrajs: &[Vec<usize>], tau: usize, cfg: &ScoreConfig) -> Result<f64> {
    let n = dtrajs.iter().flatten().copied().max().map_or(0, |m| m + 1);
    if n == 0 {
        return Err(Error::EmptyDataset("empty discrete trajectories".into()));
    }
    let features: Vec<DMatrix<f64>> = dtrajs.iter().map(|d| one_hot(d, n)).collect();
    let cov = lagged_covariances(&features, tau, true)?;
    crisp_score(&cov, n, cfg)
}

/// VAMP-2 score of indicator features for explicit `(from, to)` state
/// pairs, e.g. the validation pairs of a split.
pub fn crisp_vamp2(from: &[usize], to: &[usize], n_states: usize, cfg: &ScoreConfig) -> Result<f64> {
    if from.len() != to.len() {
        return Err(Error::Dimension("state pair lists differ in length".into()));
    }
    if from.iter().chain(to).any(|&s| s >= n_states) {
        return Err(Error::InvalidArgument(format!("state label outside 0..{n_states}")));
    }
    let cov = covariances(&one_hot(from, n_states), &one_hot(to, n_states), true)?;
    crisp_score(&cov, n_states, cfg)
}

fn crisp_score(cov: &CovarianceSet, n: usize, cfg: &ScoreConfig) -> Result<f64> {
    let cfg = ScoreConfig {
        k: cfg.k.min(n),
        ..*cfg
    };
    match vamp2_score(cov, &cfg) {
        Err(Error::RankZero { .. }) => Ok(if cfg.include_constant { 1.0 } else { 0.0 }),
        other => other,
    }
}
