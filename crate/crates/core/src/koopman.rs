//! Koopman matrix estimation from frozen features, implied timescales and
//! Chapman-Kolmogorov tests.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::numlin::{self, DEFAULT_EPS_REL};
use crate::vampscore::{covariances, CovarianceSet, FeatureMap};

#[derive(Debug, Clone)]
pub struct KoopmanModel {
    /// `K = C00^+ C01`; rows index the source features.
    pub k_matrix: DMatrix<f64>,
    pub lag: usize,
    /// Sorted by modulus, descending.
    pub eigenvalues: Vec<Complex64>,
    /// Column `i` is the right eigenvector paired with `eigenvalues[i]`.
    pub right_eigvecs: DMatrix<Complex64>,
    pub mean0: DVector<f64>,
    pub mean1: DVector<f64>,
}

impl KoopmanModel {
    pub fn dim(&self) -> usize {
        self.k_matrix.nrows()
    }
}

/// Passes frames through unchanged.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMap(pub usize);

impl FeatureMap for IdentityMap {
    fn output_dim(&self) -> usize {
        self.0
    }

    fn transform(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if frames.ncols() != self.0 {
            return Err(Error::Dimension(format!(
                "identity map expects {} columns, got {}",
                self.0,
                frames.ncols()
            )));
        }
        Ok(frames.clone())
    }
}

/// Feature values of every frame of every trajectory.
pub fn featurize<F: FeatureMap + ?Sized>(model: &F, trajs: &[Trajectory]) -> Result<Vec<DMatrix<f64>>> {
    trajs.iter().map(|t| model.transform(&t.frames)).collect()
}

/// Covariances of all `(t, t + tau)` pairs of pre-computed feature series.
pub fn lagged_covariances(features: &[DMatrix<f64>], tau: usize, mean_free: bool) -> Result<CovarianceSet> {
    if tau == 0 {
        return Err(Error::InvalidArgument("lag must be at least 1".into()));
    }
    let m = features.first().map(|f| f.ncols()).unwrap_or(0);
    if features.iter().any(|f| f.ncols() != m) {
        return Err(Error::Dimension("feature series differ in width".into()));
    }
    let n: usize = features.iter().map(|f| f.nrows().saturating_sub(tau)).sum();
    if n == 0 {
        return Err(Error::EmptyDataset(format!(
            "lag {tau} is not shorter than any trajectory"
        )));
    }
    let mut x = DMatrix::zeros(n, m);
    let mut y = DMatrix::zeros(n, m);
    let mut row = 0;
    for f in features {
        let len = f.nrows().saturating_sub(tau);
        if len == 0 {
            continue;
        }
        x.rows_mut(row, len).copy_from(&f.rows(0, len));
        y.rows_mut(row, len).copy_from(&f.rows(tau, len));
        row += len;
    }
    covariances(&x, &y, mean_free)
}

/// Least-squares Koopman matrix from raw (non-centered) second moments.
pub fn estimate_k(cov: &CovarianceSet, lag: usize, eps_rel: f64) -> Result<KoopmanModel> {
    if cov.mean_free {
        return Err(Error::InvalidArgument(
            "Koopman estimation needs non-mean-free covariances".into(),
        ));
    }
    let c00_pinv = numlin::pinv_named(&cov.c00, eps_rel, "C00")?;
    let k_matrix = &c00_pinv.matrix * &cov.c01;
    let eig = numlin::general_eig(&k_matrix, k_matrix.nrows())?;
    Ok(KoopmanModel {
        k_matrix,
        lag,
        eigenvalues: eig.eigenvalues,
        right_eigvecs: eig.eigenvectors,
        mean0: cov.mean0.clone(),
        mean1: cov.mean1.clone(),
    })
}

/// `t = -tau / ln|lambda|`; infinite for `|lambda| >= 1`, zero for
/// `lambda = 0`.
pub fn implied_timescale(lambda: Complex64, tau: f64) -> f64 {
    let r = lambda.norm();
    if r >= 1.0 {
        f64::INFINITY
    } else if r == 0.0 {
        0.0
    } else {
        -tau / r.ln()
    }
}

/// Implied timescales (in frames) as a function of lag time.
#[derive(Debug, Clone, PartialEq)]
pub struct ITSCurve {
    pub lags: Vec<usize>,
    /// `timescales[l][i]` belongs to `lags[l]` and the `i`-th slowest
    /// nontrivial process.
    pub timescales: Vec<Vec<f64>>,
}

fn nontrivial_timescales(model: &KoopmanModel, k_eigs: usize) -> Result<Vec<f64>> {
    if model.eigenvalues.len() < k_eigs + 1 {
        return Err(Error::InvalidArgument(format!(
            "{k_eigs} timescales requested from a {}-dimensional model",
            model.eigenvalues.len()
        )));
    }
    Ok(model.eigenvalues[1..=k_eigs]
        .iter()
        .map(|&l| implied_timescale(l, model.lag as f64))
        .collect())
}

/// Re-estimates `K` at every lag with the same frozen transform.
pub fn implied_timescales<F: FeatureMap + ?Sized>(
    transform: &F,
    trajs: &[Trajectory],
    lags: &[usize],
    k_eigs: usize,
) -> Result<ITSCurve> {
    let features = featurize(transform, trajs)?;
    its_from_features(&features, lags, k_eigs)
}

pub fn its_from_features(features: &[DMatrix<f64>], lags: &[usize], k_eigs: usize) -> Result<ITSCurve> {
    let shortest = features.iter().map(|f| f.nrows()).min().unwrap_or(0);
    let mut timescales = Vec::with_capacity(lags.len());
    for &tau in lags {
        if tau >= shortest {
            return Err(Error::InvalidArgument(format!(
                "lag {tau} is not shorter than the shortest trajectory ({shortest} frames)"
            )));
        }
        let cov = lagged_covariances(features, tau, false)?;
        let model = estimate_k(&cov, tau, DEFAULT_EPS_REL)?;
        timescales.push(nontrivial_timescales(&model, k_eigs)?);
    }
    Ok(ITSCurve {
        lags: lags.to_vec(),
        timescales,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CKResult {
    pub tau: usize,
    pub n_values: Vec<usize>,
    /// `K(tau)^n`
    pub predicted: Vec<DMatrix<f64>>,
    /// `K(n tau)`
    pub estimated: Vec<DMatrix<f64>>,
}

pub fn matrix_power(k: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(k.nrows(), k.ncols());
    for _ in 0..n {
        out = &out * k;
    }
    out
}

pub fn ck_test<F: FeatureMap + ?Sized>(
    transform: &F,
    trajs: &[Trajectory],
    tau: usize,
    n_values: &[usize],
) -> Result<CKResult> {
    let features = featurize(transform, trajs)?;
    ck_from_features(&features, tau, n_values)
}

pub fn ck_from_features(features: &[DMatrix<f64>], tau: usize, n_values: &[usize]) -> Result<CKResult> {
    let shortest = features.iter().map(|f| f.nrows()).min().unwrap_or(0);
    let max_n = n_values.iter().copied().max().unwrap_or(1);
    if n_values.contains(&0) {
        return Err(Error::InvalidArgument("CK multiples must be at least 1".into()));
    }
    if max_n * tau >= shortest {
        return Err(Error::EmptyDataset(format!(
            "lag {} is not shorter than the shortest trajectory ({shortest} frames)",
            max_n * tau
        )));
    }
    let base = estimate_k(&lagged_covariances(features, tau, false)?, tau, DEFAULT_EPS_REL)?.k_matrix;
    let mut predicted = Vec::with_capacity(n_values.len());
    let mut estimated = Vec::with_capacity(n_values.len());
    for &n in n_values {
        if n == 1 {
            predicted.push(base.clone());
            estimated.push(base.clone());
            continue;
        }
        predicted.push(matrix_power(&base, n));
        let cov = lagged_covariances(features, n * tau, false)?;
        estimated.push(estimate_k(&cov, n * tau, DEFAULT_EPS_REL)?.k_matrix);
    }
    Ok(CKResult {
        tau,
        n_values: n_values.to_vec(),
        predicted,
        estimated,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum EigenfunctionValues {
    Real(DVector<f64>),
    /// One member of a conjugate pair; the partner is the conjugate.
    Complex(DVector<Complex64>),
}

impl EigenfunctionValues {
    pub fn real(&self) -> Option<&DVector<f64>> {
        match self {
            EigenfunctionValues::Real(v) => Some(v),
            EigenfunctionValues::Complex(_) => None,
        }
    }
}

/// `psi_i(x) = sum_j r_ij chi_j(x)` evaluated on every row of `frames`.
pub fn eigenfunction_values<F: FeatureMap + ?Sized>(
    model: &KoopmanModel,
    transform: &F,
    frames: &DMatrix<f64>,
    index: usize,
) -> Result<EigenfunctionValues> {
    if index >= model.right_eigvecs.ncols() {
        return Err(Error::InvalidArgument(format!(
            "eigenfunction {index} requested from a {}-dimensional model",
            model.right_eigvecs.ncols()
        )));
    }
    let chi = transform.transform(frames)?;
    if chi.ncols() != model.dim() {
        return Err(Error::Dimension(format!(
            "transform has {} outputs, model has {}",
            chi.ncols(),
            model.dim()
        )));
    }
    let r = model.right_eigvecs.column(index);
    if model.eigenvalues[index].im == 0.0 {
        let re = DVector::from_iterator(r.len(), r.iter().map(|c| c.re));
        Ok(EigenfunctionValues::Real(&chi * re))
    } else {
        let chic = chi.map(|v| Complex64::new(v, 0.0));
        Ok(EigenfunctionValues::Complex(chic * r))
    }
}

/// Linear-interpolated quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Central percentile interval of `values` at confidence `level`.
pub fn percentile_interval(values: &[f64], level: f64) -> Option<(f64, f64)> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    Some((quantile_sorted(&s, a), quantile_sorted(&s, 1.0 - a)))
}

/// Permutation ordering the states of a model by their weight in the
/// slowest nontrivial eigenvector; used to compare fuzzy states across runs.
pub fn state_order(model: &KoopmanModel) -> Vec<usize> {
    let m = model.dim();
    let mut order: Vec<usize> = (0..m).collect();
    if m < 2 {
        return order;
    }
    let r = model.right_eigvecs.column(1);
    order.sort_by(|&a, &b| r[a].re.total_cmp(&r[b].re).then(a.cmp(&b)));
    order
}

pub fn permute(k: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[(order[i], order[j])])
}

/// Per-entry percentile bands of the CK matrices over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CKBands {
    pub n_values: Vec<usize>,
    pub predicted_lo: Vec<DMatrix<f64>>,
    pub predicted_hi: Vec<DMatrix<f64>>,
    pub estimated_lo: Vec<DMatrix<f64>>,
    pub estimated_hi: Vec<DMatrix<f64>>,
}

impl CKBands {
    /// Every entry's predicted and estimated bands overlap.
    pub fn consistent(&self) -> bool {
        self.worst_gap() <= 0.0
    }

    /// Largest distance between non-overlapping predicted and estimated
    /// bands; non-positive when all overlap.
    pub fn worst_gap(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for s in 0..self.n_values.len() {
            for i in 0..self.predicted_lo[s].len() {
                let gap = (self.estimated_lo[s][i] - self.predicted_hi[s][i])
                    .max(self.predicted_lo[s][i] - self.estimated_hi[s][i]);
                worst = worst.max(gap);
            }
        }
        worst
    }
}

/// Bands over runs; each run's states are first reordered with `orders`.
pub fn ck_bands(results: &[CKResult], orders: &[Vec<usize>], level: f64) -> Result<CKBands> {
    let first = results
        .first()
        .ok_or_else(|| Error::EmptyDataset("no CK results".into()))?;
    if orders.len() != results.len() {
        return Err(Error::Dimension("one state order per run is required".into()));
    }
    if results.iter().any(|r| r.n_values != first.n_values) {
        return Err(Error::InvalidArgument("CK results use different multiples".into()));
    }
    let m = first.predicted[0].nrows();
    let band = |pick: &dyn Fn(&CKResult) -> &Vec<DMatrix<f64>>, s: usize| {
        let mut lo = DMatrix::zeros(m, m);
        let mut hi = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let vals: Vec<f64> = results
                    .iter()
                    .zip(orders)
                    .map(|(r, o)| pick(r)[s][(o[i], o[j])])
                    .collect();
                let (l, h) = percentile_interval(&vals, level).unwrap_or((f64::NAN, f64::NAN));
                lo[(i, j)] = l;
                hi[(i, j)] = h;
            }
        }
        (lo, hi)
    };
    let mut out = CKBands {
        n_values: first.n_values.clone(),
        predicted_lo: vec![],
        predicted_hi: vec![],
        estimated_lo: vec![],
        estimated_hi: vec![],
    };
    for s in 0..first.n_values.len() {
        let (pl, ph) = band(&|r| &r.predicted, s);
        let (el, eh) = band(&|r| &r.estimated, s);
        out.predicted_lo.push(pl);
        out.predicted_hi.push(ph);
        out.estimated_lo.push(el);
        out.estimated_hi.push(eh);
    }
    Ok(out)
}
