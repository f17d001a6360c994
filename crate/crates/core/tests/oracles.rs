//! Closed-form and counting oracles for the Koopman, MSM and score code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vampnet_core::baseline::{count_matrix, msm_estimate, msm_vamp2, one_hot};
use vampnet_core::koopman::{ck_from_features, estimate_k, implied_timescale, its_from_features, lagged_covariances};
use vampnet_core::numlin::{general_eig, DEFAULT_EPS_REL};
use vampnet_core::vampscore::{score_and_gradients, vamp2_score, CovarianceSet, ScoreConfig, ScoreKind};

fn chain_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.90, 0.08, 0.02, 0.05, 0.90, 0.05, 0.02, 0.08, 0.90])
}

fn sample_chain(p: &DMatrix<f64>, steps: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = 0;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for j in 0..p.ncols() {
            acc += p[(s, j)];
            if u < acc {
                s = j;
                break;
            }
        }
    }
    out
}

fn stationary(p: &DMatrix<f64>) -> DVector<f64> {
    let mut pi = DVector::from_element(p.nrows(), 1.0 / p.nrows() as f64);
    for _ in 0..10_000 {
        pi = p.transpose() * pi;
    }
    &pi / pi.sum()
}

#[test]
fn koopman_of_indicators_is_the_count_estimator() {
    let p = chain_matrix();
    let d = sample_chain(&p, 100_000, 1);
    let feats = vec![one_hot(&d, 3)];
    let k = estimate_k(&lagged_covariances(&feats, 1, false).unwrap(), 1, DEFAULT_EPS_REL).unwrap();
    let c = count_matrix(&[d.clone()], 1).unwrap();
    let mut row_norm = c.clone();
    for mut r in row_norm.row_iter_mut() {
        let s = r.sum();
        r /= s;
    }
    assert!((&k.k_matrix - &row_norm).abs().max() < 1e-12);
    let msm = msm_estimate(&[d], 1).unwrap();
    assert!((&msm.transition_matrix - &row_norm).abs().max() < 1e-12);
    // and the estimate is near the generating matrix
    let n = 100_000.0_f64;
    assert!((&msm.transition_matrix - &p).abs().max() < 3.0 / n.sqrt());
}

#[test]
fn msm_score_matches_analytic_covariances() {
    let p = chain_matrix();
    let t = 100_000;
    let d = sample_chain(&p, t, 2);
    let cfg = ScoreConfig::new(3);
    let est = msm_vamp2(&[d], 1, &cfg).unwrap();
    let pi = stationary(&p);
    let diag = DMatrix::from_diagonal(&pi);
    let outer = &pi * pi.transpose();
    let c00 = &diag - &outer;
    let cov = CovarianceSet {
        c00: c00.clone(),
        c01: &diag * &p - &outer,
        c11: c00,
        mean0: pi.clone(),
        mean1: pi,
        t_pairs: t,
        mean_free: true,
    };
    let exact = vamp2_score(&cov, &cfg).unwrap();
    assert!((est - exact).abs() < 2.0 / (t as f64).sqrt(), "{est} vs {exact}");
}

#[test]
fn two_state_score_is_one_plus_eigenvalue_squared() {
    // symmetric two-state chain: the only nontrivial singular value is 1 - 2a
    let a = 0.1;
    let p = DMatrix::from_row_slice(2, 2, &[1.0 - a, a, a, 1.0 - a]);
    let d = sample_chain(&p, 200_000, 3);
    let s = msm_vamp2(&[d], 1, &ScoreConfig::new(2)).unwrap();
    let exact = 1.0 + (1.0 - 2.0 * a).powi(2);
    assert!((s - exact).abs() < 0.01, "{s} vs {exact}");
}

#[test]
fn chapman_kolmogorov_holds_for_a_markov_chain() {
    let p = chain_matrix();
    let d = sample_chain(&p, 100_000, 4);
    let feats = vec![one_hot(&d, 3)];
    let ck = ck_from_features(&feats, 1, &[1, 2, 3, 4, 5]).unwrap();
    assert_eq!(ck.predicted[0], ck.estimated[0]);
    for (pred, est) in ck.predicted.iter().zip(&ck.estimated) {
        assert!((pred - est).abs().max() < 0.05);
    }
}

#[test]
fn chain_timescales_match_generator() {
    let p = chain_matrix();
    let d = sample_chain(&p, 200_000, 5);
    let exact = general_eig(&p, 0).unwrap().eigenvalues;
    let feats = vec![one_hot(&d, 3)];
    let its = its_from_features(&feats, &[1, 2, 4], 2).unwrap();
    for (l, &tau) in its.lags.iter().enumerate() {
        for i in 0..2 {
            let want = implied_timescale(exact[i + 1], 1.0);
            let got = its.timescales[l][i];
            assert!((got - want).abs() / want < 0.1, "tau {tau} process {i}: {got} vs {want}");
        }
    }
}

#[test]
fn implied_timescale_spot_values() {
    let t = implied_timescale(Complex64::new(0.5, 0.0), 2.0);
    assert!((t - 2.0 / 2f64.ln()).abs() < 1e-12);
    assert_eq!(implied_timescale(Complex64::new(1.0, 0.0), 1.0), f64::INFINITY);
    assert_eq!(implied_timescale(Complex64::new(0.0, 0.0), 1.0), 0.0);
    let c = implied_timescale(Complex64::new(0.3, 0.4), 1.0);
    assert!((c - (-1.0 / 0.5f64.ln())).abs() < 1e-12);
}

fn random(t: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(t, m, |_, _| rng.random_range(-1.0..1.0))
}

/// Central finite differences of the full VAMP-2 score against the analytic
/// gradient, 20 random instances with m = 4, T = 200.
#[test]
fn score_gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(200, 4, &mut rng);
        let mix = random(4, 4, &mut rng);
        let y = &x * mix * 0.7 + random(200, 4, &mut rng) * 0.5;
        let cfg = ScoreConfig::new(4);
        let (_, g) = score_and_gradients(ScoreKind::Vamp2, &x, &y, &cfg).unwrap();
        let f = |x: &DMatrix<f64>, y: &DMatrix<f64>| score_and_gradients(ScoreKind::Vamp2, x, y, &cfg).unwrap().0;
        let scale = g.grad_x.abs().max().max(g.grad_y.abs().max());
        let h = 1e-5;
        for (which, grad) in [(0, &g.grad_x), (1, &g.grad_y)] {
            for r in (0..200).step_by(7) {
                for c in 0..4 {
                    let (mut xp, mut yp) = (x.clone(), y.clone());
                    let (mut xm, mut ym) = (x.clone(), y.clone());
                    if which == 0 {
                        xp[(r, c)] += h;
                        xm[(r, c)] -= h;
                    } else {
                        yp[(r, c)] += h;
                        ym[(r, c)] -= h;
                    }
                    let fd = (f(&xp, &yp) - f(&xm, &ym)) / (2.0 * h);
                    let err = (fd - grad[(r, c)]).abs() / grad[(r, c)].abs().max(fd.abs()).max(1e-2 * scale);
                    worst = worst.max(err);
                }
            }
        }
    }
    assert!(worst < 1e-6, "max relative error {worst}");
}
