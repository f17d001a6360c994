//! Covariance estimation and VAMP scores with their gradients.
//!
//! Batches are stored with one sample per row: `x` is `T x m` holding the
//! feature values `chi_0(x_t)` and `y` holds `chi_1(x_{t+tau})`.
//!
//! The VAMP-2 gradient uses the closed form
//! `dR/dX = 2/(T-1) (Y - X C00^+ C01) C11^+ C10 C00^+` (and its mirror for
//! `Y`). VAMP-1 and truncated (`k < rank`) scores are differentiated through
//! the whitened matrix `S = C00^{-1/2} C01 C11^{-1/2}` with Daleckii-Krein
//! derivatives of the inverse square roots.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{LaggedDataset, Trajectory};
use crate::error::{Error, Result};
use crate::numlin::{self, DEFAULT_EPS_REL};

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub c00: DMatrix<f64>,
    pub c01: DMatrix<f64>,
    pub c11: DMatrix<f64>,
    pub mean0: DVector<f64>,
    pub mean1: DVector<f64>,
    pub t_pairs: usize,
    pub mean_free: bool,
}

impl CovarianceSet {
    pub fn dim(&self) -> usize {
        self.c00.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrobeniusScaling {
    /// `sum_i sigma_i^2`
    Sum,
    /// `m^{-1} sum_i sigma_i^2`
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Vamp1,
    Vamp2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig {
    /// Number of singular values scored.
    pub k: usize,
    pub eps_rel: f64,
    /// Adds the constant singular function's contribution of 1.
    pub include_constant: bool,
    pub frobenius_scaling: FrobeniusScaling,
}

impl ScoreConfig {
    pub fn new(k: usize) -> Self {
        ScoreConfig {
            k,
            eps_rel: DEFAULT_EPS_REL,
            include_constant: true,
            frobenius_scaling: FrobeniusScaling::Sum,
        }
    }

    fn check(&self, m: usize) -> Result<()> {
        if self.k == 0 || self.k > m {
            return Err(Error::InvalidArgument(format!(
                "score k = {} must lie in 1..={m}",
                self.k
            )));
        }
        Ok(())
    }

    fn scale(&self, m: usize) -> f64 {
        match self.frobenius_scaling {
            FrobeniusScaling::Sum => 1.0,
            FrobeniusScaling::Mean => 1.0 / m as f64,
        }
    }

    fn offset(&self) -> f64 {
        if self.include_constant {
            1.0
        } else {
            0.0
        }
    }
}

/// Gradients of a score with respect to the rows of the two batches.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub grad_x: DMatrix<f64>,
    pub grad_y: DMatrix<f64>,
}

impl GradientPair {
    pub fn zeros(t: usize, m: usize) -> Self {
        GradientPair {
            grad_x: DMatrix::zeros(t, m),
            grad_y: DMatrix::zeros(t, m),
        }
    }
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.iter().sum::<f64>() / n))
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for (mut col, m) in c.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
    c
}

/// Instantaneous and time-lagged covariances of two feature batches.
///
/// With `mean_free` the batches are centered and normalized by `T - 1`;
/// otherwise raw second moments normalized by `T` are returned.
pub fn covariances(x: &DMatrix<f64>, y: &DMatrix<f64>, mean_free: bool) -> Result<CovarianceSet> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension(format!(
            "batches differ in shape: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let t = x.nrows();
    if t == 0 || (mean_free && t < 2) {
        return Err(Error::InvalidArgument(format!(
            "covariance estimation needs at least 2 samples, got {t}"
        )));
    }
    let mean0 = column_means(x);
    let mean1 = column_means(y);
    let (xs, ys, norm) = if mean_free {
        (center(x, &mean0), center(y, &mean1), (t - 1) as f64)
    } else {
        (x.clone(), y.clone(), t as f64)
    };
    let xt = xs.transpose();
    let c00 = numlin::symmetrize(&(&xt * &xs)) / norm;
    let c01 = (&xt * &ys) / norm;
    let c11 = numlin::symmetrize(&(ys.transpose() * &ys)) / norm;
    Ok(CovarianceSet {
        c00,
        c01,
        c11,
        mean0,
        mean1,
        t_pairs: t,
        mean_free,
    })
}

/// Whitened cross-covariance together with the whitening factors.
#[derive(Debug, Clone)]
pub struct Whitened {
    pub s: DMatrix<f64>,
    pub c00_isqrt: DMatrix<f64>,
    pub c11_isqrt: DMatrix<f64>,
    pub rank0: usize,
    pub rank1: usize,
}

pub fn whiten(cov: &CovarianceSet, eps_rel: f64) -> Result<Whitened> {
    let a = numlin::inv_sqrt_named(&cov.c00, eps_rel, "C00")?;
    let b = numlin::inv_sqrt_named(&cov.c11, eps_rel, "C11")?;
    let s = &a.matrix * &cov.c01 * &b.matrix;
    Ok(Whitened {
        s,
        c00_isqrt: a.matrix,
        c11_isqrt: b.matrix,
        rank0: a.rank,
        rank1: b.rank,
    })
}

/// Singular values of the whitened cross-covariance, descending.
pub fn singular_values(cov: &CovarianceSet, eps_rel: f64) -> Result<DVector<f64>> {
    let w = whiten(cov, eps_rel)?;
    Ok(numlin::svd(&w.s)?.singular_values)
}

pub fn score(kind: ScoreKind, cov: &CovarianceSet, cfg: &ScoreConfig) -> Result<f64> {
    cfg.check(cov.dim())?;
    let sv = singular_values(cov, cfg.eps_rel)?;
    let kept = sv.iter().take(cfg.k);
    let total: f64 = match kind {
        ScoreKind::Vamp1 => kept.sum(),
        ScoreKind::Vamp2 => kept.map(|s| s * s).sum(),
    };
    Ok(total * cfg.scale(cov.dim()) + cfg.offset())
}

pub fn vamp2_score(cov: &CovarianceSet, cfg: &ScoreConfig) -> Result<f64> {
    score(ScoreKind::Vamp2, cov, cfg)
}

pub fn vamp1_score(cov: &CovarianceSet, cfg: &ScoreConfig) -> Result<f64> {
    score(ScoreKind::Vamp1, cov, cfg)
}

/// Closed-form gradient of the full VAMP-2 score (all singular values, sum
/// scaling, constant excluded since it does not vary) with respect to the
/// *centered* batches that produced `cov`.
pub fn vamp2_gradients(
    xc: &DMatrix<f64>,
    yc: &DMatrix<f64>,
    cov: &CovarianceSet,
    eps_rel: f64,
) -> Result<GradientPair> {
    if xc.shape() != yc.shape() || xc.ncols() != cov.dim() {
        return Err(Error::Dimension(format!(
            "batches {:?}/{:?} do not match {}-dimensional covariances",
            xc.shape(),
            yc.shape(),
            cov.dim()
        )));
    }
    let n = (cov.t_pairs.max(2) - 1) as f64;
    let c00_inv = numlin::pinv_named(&cov.c00, eps_rel, "C00")?.matrix;
    let c11_inv = numlin::pinv_named(&cov.c11, eps_rel, "C11")?.matrix;
    let c10 = cov.c01.transpose();
    let k01 = &c00_inv * &cov.c01; // C00^+ C01
    let k10 = &c11_inv * &c10; // C11^+ C10
    let grad_x = (yc - xc * &k01) * (&k10 * &c00_inv) * (2.0 / n);
    let grad_y = (xc - yc * &k10) * (&k01 * &c11_inv) * (2.0 / n);
    Ok(GradientPair { grad_x, grad_y })
}

/// Daleckii-Krein derivative of `tr(H^T f(C))` with respect to symmetric `C`
/// for `f(l) = l^{-1/2}` on the retained eigenspace and zero elsewhere.
fn inv_sqrt_pullback(c: &DMatrix<f64>, h: &DMatrix<f64>, eps_rel: f64) -> Result<DMatrix<f64>> {
    let eig = numlin::sym_eig(c)?;
    let lmax = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = eps_rel * lmax;
    let n = c.nrows();
    let kept: Vec<bool> = eig.eigenvalues.iter().map(|&l| lmax > 0.0 && l >= cutoff).collect();
    let q = &eig.eigenvectors;
    let m = q.transpose() * h * q;
    let m = numlin::symmetrize(&m);
    let f = |l: f64| 1.0 / l.sqrt();
    let mut inner = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if !(kept[i] && kept[j]) {
                continue;
            }
            let (li, lj) = (eig.eigenvalues[i], eig.eigenvalues[j]);
            let d = if (li - lj).abs() <= 1e-12 * li.abs().max(lj.abs()) {
                -0.5 * li.powf(-1.5)
            } else {
                (f(li) - f(lj)) / (li - lj)
            };
            inner[(i, j)] = d * m[(i, j)];
        }
    }
    Ok(q * inner * q.transpose())
}

/// Gradient of a score whose derivative with respect to `S` is `g_s`,
/// pulled back to the centered batches.
fn pullback_through_s(
    xc: &DMatrix<f64>,
    yc: &DMatrix<f64>,
    cov: &CovarianceSet,
    w: &Whitened,
    g_s: &DMatrix<f64>,
    eps_rel: f64,
) -> Result<GradientPair> {
    let n = (cov.t_pairs.max(2) - 1) as f64;
    let a = &w.c00_isqrt;
    let b = &w.c11_isqrt;
    let d_c01 = a * g_s * b;
    let h_a = g_s * b * cov.c01.transpose();
    let h_b = cov.c01.transpose() * a * g_s;
    let d_c00 = inv_sqrt_pullback(&cov.c00, &h_a, eps_rel)?;
    let d_c11 = inv_sqrt_pullback(&cov.c11, &h_b, eps_rel)?;
    let grad_x = (yc * d_c01.transpose() + xc * d_c00 * 2.0) / n;
    let grad_y = (xc * &d_c01 + yc * d_c11 * 2.0) / n;
    Ok(GradientPair { grad_x, grad_y })
}

fn project_centering(g: &mut DMatrix<f64>) {
    let mean = column_means(g);
    for (mut col, m) in g.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
}

/// Score of the raw batches and its gradient with respect to the raw
/// (uncentered) rows, including the centering Jacobian.
pub fn score_and_gradients(
    kind: ScoreKind,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &ScoreConfig,
) -> Result<(f64, GradientPair)> {
    let cov = covariances(x, y, true)?;
    cfg.check(cov.dim())?;
    let xc = center(x, &cov.mean0);
    let yc = center(y, &cov.mean1);
    let w = whiten(&cov, cfg.eps_rel)?;
    let dec = numlin::svd(&w.s)?;
    let m = cov.dim();
    let k = cfg.k.min(dec.singular_values.len());
    let scale = cfg.scale(m);
    let sv = &dec.singular_values;
    let raw: f64 = match kind {
        ScoreKind::Vamp1 => sv.iter().take(k).sum(),
        ScoreKind::Vamp2 => sv.iter().take(k).map(|s| s * s).sum(),
    };
    let value = raw * scale + cfg.offset();

    let full_rank = k >= w.rank0.min(w.rank1);
    let mut grads = if kind == ScoreKind::Vamp2 && full_rank {
        vamp2_gradients(&xc, &yc, &cov, cfg.eps_rel)?
    } else {
        let weight = |i: usize| match kind {
            ScoreKind::Vamp1 => 1.0,
            ScoreKind::Vamp2 => 2.0 * sv[i],
        };
        let mut g_s = DMatrix::zeros(m, m);
        for i in 0..k {
            if sv[i] <= 0.0 {
                continue;
            }
            g_s += dec.left.column(i) * dec.right.column(i).transpose() * weight(i);
        }
        pullback_through_s(&xc, &yc, &cov, &w, &g_s, cfg.eps_rel)?
    };
    if scale != 1.0 {
        grads.grad_x *= scale;
        grads.grad_y *= scale;
    }
    project_centering(&mut grads.grad_x);
    project_centering(&mut grads.grad_y);
    Ok((value, grads))
}

/// Reference implementation of the `S`-chain gradient for a VAMP-2 score;
/// used to cross-check the closed form.
pub fn vamp2_gradients_via_s(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    eps_rel: f64,
) -> Result<GradientPair> {
    let cov = covariances(x, y, true)?;
    let xc = center(x, &cov.mean0);
    let yc = center(y, &cov.mean1);
    let w = whiten(&cov, eps_rel)?;
    let g_s = &w.s * 2.0;
    let mut g = pullback_through_s(&xc, &yc, &cov, &w, &g_s, eps_rel)?;
    project_centering(&mut g.grad_x);
    project_centering(&mut g.grad_y);
    Ok(g)
}

/// A frozen mapping from configurations (rows) to feature values (rows).
pub trait FeatureMap {
    fn output_dim(&self) -> usize;
    fn transform(&self, frames: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

/// VAMP-2 score of the transformed validation pairs, using covariances of
/// those pairs only.
pub fn validation_score<F: FeatureMap + ?Sized>(
    model: &F,
    trajs: &[Trajectory],
    ds: &LaggedDataset,
    validation: &[usize],
    cfg: &ScoreConfig,
) -> Result<f64> {
    if validation.len() < 2 {
        return Err(Error::EmptyDataset(format!(
            "validation set has {} pairs",
            validation.len()
        )));
    }
    let (x, y) = ds.gather(trajs, validation);
    let cov = covariances(&model.transform(&x)?, &model.transform(&y)?, true)?;
    match vamp2_score(&cov, cfg) {
        // a transform that collapses the data carries no information beyond
        // the constant
        Err(Error::RankZero { .. }) => Ok(cfg.offset()),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(t: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, m, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Correlated pair of batches.
    fn correlated(t: usize, m: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = random(t, m, seed);
        let noise = random(t, m, seed + 1000);
        let mix = random(m, m, seed + 2000);
        let y = &x * mix * 0.8 + noise * 0.5;
        (x, y)
    }

    #[test]
    fn constant_feature_has_zero_covariance() {
        let mut x = random(50, 3, 1);
        x.column_mut(1).fill(4.2);
        let cov = covariances(&x, &x, true).unwrap();
        assert!(cov.c00.row(1).iter().all(|v| v.abs() < 1e-15));
        assert!(cov.c01.column(1).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn identical_batches() {
        let x = random(40, 3, 2);
        let cov = covariances(&x, &x, true).unwrap();
        assert!((&cov.c00 - &cov.c11).abs().max() < 1e-15);
        assert!((&cov.c00 - &cov.c01).abs().max() < 1e-15);
        assert!((&cov.c01 - cov.c01.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn too_few_samples() {
        let x = random(1, 2, 0);
        assert!(covariances(&x, &x, true).is_err());
        assert!(covariances(&x, &x, false).is_ok());
        assert!(matches!(
            covariances(&x, &random(2, 2, 0), false),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn identical_features_score_m_plus_one() {
        let x = random(200, 4, 3);
        let cov = covariances(&x, &x, true).unwrap();
        let cfg = ScoreConfig::new(4);
        assert!((vamp2_score(&cov, &cfg).unwrap() - 5.0).abs() < 1e-10);
        assert!((vamp1_score(&cov, &cfg).unwrap() - 5.0).abs() < 1e-10);
        let mean = ScoreConfig {
            frobenius_scaling: FrobeniusScaling::Mean,
            ..cfg
        };
        assert!((vamp2_score(&cov, &mean).unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn uncorrelated_scores_constant_only() {
        let x = random(100, 3, 4);
        let mut cov = covariances(&x, &random(100, 3, 5), true).unwrap();
        cov.c01.fill(0.0);
        let cfg = ScoreConfig::new(3);
        assert_eq!(vamp2_score(&cov, &cfg).unwrap(), 1.0);
        assert_eq!(vamp1_score(&cov, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn rank_zero_names_matrix() {
        let x = DMatrix::from_element(10, 2, 1.0);
        let cov = covariances(&x, &random(10, 2, 1), true).unwrap();
        match vamp2_score(&cov, &ScoreConfig::new(2)) {
            Err(Error::RankZero { what }) => assert_eq!(what, "C00"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn k_out_of_range() {
        let x = random(10, 2, 1);
        let cov = covariances(&x, &x, true).unwrap();
        assert!(vamp2_score(&cov, &ScoreConfig::new(3)).is_err());
        assert!(vamp2_score(&cov, &ScoreConfig::new(0)).is_err());
    }

    #[test]
    fn vamp1_dominates_vamp2_when_sigma_below_one() {
        for seed in 0..10 {
            let (x, y) = correlated(300, 3, seed);
            let cov = covariances(&x, &y, true).unwrap();
            let sv = singular_values(&cov, DEFAULT_EPS_REL).unwrap();
            assert!(sv.iter().all(|&s| s <= 1.0 + 1e-12));
            let cfg = ScoreConfig::new(3);
            assert!(vamp1_score(&cov, &cfg).unwrap() >= vamp2_score(&cov, &cfg).unwrap());
        }
    }

    #[test]
    fn score_monotone_in_k() {
        let (x, y) = correlated(300, 4, 8);
        let cov = covariances(&x, &y, true).unwrap();
        let scores: Vec<f64> = (1..=4)
            .map(|k| vamp2_score(&cov, &ScoreConfig::new(k)).unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn zero_cross_covariance_gives_zero_gradient() {
        let x = random(50, 2, 1);
        let mut cov = covariances(&x, &x, true).unwrap();
        cov.c01.fill(0.0);
        let (_, xc) = crate::dataset::remove_mean(&x);
        let g = vamp2_gradients(&xc, &xc, &cov, DEFAULT_EPS_REL).unwrap();
        assert_eq!(g.grad_x.abs().max(), 0.0);
        assert_eq!(g.grad_y.abs().max(), 0.0);
    }

    #[test]
    fn gradient_roles_swap() {
        let (x, y) = correlated(120, 3, 5);
        let cfg = ScoreConfig::new(3);
        let (_, g) = score_and_gradients(ScoreKind::Vamp2, &x, &y, &cfg).unwrap();
        let (_, h) = score_and_gradients(ScoreKind::Vamp2, &y, &x, &cfg).unwrap();
        assert!((&g.grad_x - &h.grad_y).abs().max() < 1e-12);
        assert!((&g.grad_y - &h.grad_x).abs().max() < 1e-12);

        let (_, same) = score_and_gradients(ScoreKind::Vamp2, &x, &x.clone(), &cfg).unwrap();
        assert!((&same.grad_x - &same.grad_y).abs().max() < 1e-12);
    }

    #[test]
    fn closed_form_matches_s_chain() {
        for seed in 0..5 {
            let (x, y) = correlated(150, 4, seed);
            let (_, closed) =
                score_and_gradients(ScoreKind::Vamp2, &x, &y, &ScoreConfig::new(4)).unwrap();
            let chain = vamp2_gradients_via_s(&x, &y, DEFAULT_EPS_REL).unwrap();
            let scale = closed.grad_x.abs().max();
            assert!((&closed.grad_x - &chain.grad_x).abs().max() < 1e-10 * scale);
            assert!((&closed.grad_y - &chain.grad_y).abs().max() < 1e-10 * scale);
        }
    }
}
