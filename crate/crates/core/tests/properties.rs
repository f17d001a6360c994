//! Property tests for scores, Koopman estimates and the baseline pipeline.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vampnet_core::baseline::{assign, kmeans, msm_estimate, tica_fit};
use vampnet_core::dataset::Trajectory;
use vampnet_core::koopman::{estimate_k, featurize, its_from_features, lagged_covariances};
use vampnet_core::numlin::DEFAULT_EPS_REL;
use vampnet_core::vampscore::{covariances, vamp2_score, ScoreConfig};

fn random(t: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(t, m, |_, _| rng.random_range(-1.0..1.0))
}

/// An AR(1)-like multivariate series.
fn series(t: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random(m, m, &mut rng) * (0.4 / m as f64) + DMatrix::identity(m, m) * 0.5;
    let mut x = DMatrix::zeros(t, m);
    for r in 1..t {
        let prev = x.row(r - 1).clone_owned();
        let noise = random(1, m, &mut rng);
        x.set_row(r, &(prev * &a + noise));
    }
    x
}

fn well_conditioned(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::identity(m, m) + random(m, m, rng) * (0.4 / m as f64)
}

/// Positive rows summing to one, like Softmax outputs.
fn memberships(t: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut x = series(t, m, seed);
    for mut row in x.row_iter_mut() {
        row.iter_mut().for_each(|v| *v = v.exp());
        let s = row.sum();
        row /= s;
    }
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn vamp2_invariant_under_remixing(seed in any::<u64>(), m in 1usize..6) {
        let x = series(400, m, seed);
        let y = x.rows(1, 399).clone_owned();
        let x = x.rows(0, 399).clone_owned();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let (a, b) = (well_conditioned(m, &mut rng), well_conditioned(m, &mut rng));
        let cfg = ScoreConfig::new(m);
        let s0 = vamp2_score(&covariances(&x, &y, true).unwrap(), &cfg).unwrap();
        let s1 = vamp2_score(&covariances(&(&x * &a), &(&y * &b), true).unwrap(), &cfg).unwrap();
        prop_assert!((s0 - s1).abs() <= 1e-8, "{} vs {}", s0, s1);
    }

    #[test]
    fn vamp2_bounded_by_rank(seed in any::<u64>(), m in 1usize..6, k_frac in 0.0f64..1.0) {
        let x = series(300, m, seed);
        let y = x.rows(2, 298).clone_owned();
        let x = x.rows(0, 298).clone_owned();
        let k = 1 + ((m - 1) as f64 * k_frac) as usize;
        let s = vamp2_score(&covariances(&x, &y, true).unwrap(), &ScoreConfig::new(k)).unwrap();
        prop_assert!(s >= 1.0 - 1e-12 && s <= 1.0 + k as f64 + 1e-9);
    }

    #[test]
    fn timescales_invariant_under_remixing(seed in any::<u64>(), m in 2usize..5) {
        let f = memberships(600, m, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xaa);
        let a = well_conditioned(m, &mut rng);
        let lags = [1, 2, 3];
        let t0 = its_from_features(&[f.clone()], &lags, m - 1).unwrap();
        let t1 = its_from_features(&[&f * &a], &lags, m - 1).unwrap();
        for (u, v) in t0.timescales.iter().flatten().zip(t1.timescales.iter().flatten()) {
            if u.is_finite() {
                prop_assert!((u - v).abs() <= 1e-8 * u.abs().max(1.0), "{} vs {}", u, v);
            }
        }
    }

    #[test]
    fn koopman_preserves_constants_of_memberships(seed in any::<u64>(), m in 1usize..5, tau in 1usize..4) {
        let f = memberships(500, m, seed);
        let k = estimate_k(&lagged_covariances(&[f], tau, false).unwrap(), tau, DEFAULT_EPS_REL).unwrap();
        let ones = k.k_matrix.column_sum();
        for v in ones.iter() {
            prop_assert!((v - 1.0).abs() < 1e-9);
        }
        prop_assert!((k.eigenvalues[0].norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn msm_is_row_stochastic(seed in any::<u64>(), n in 2usize..8, tau in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<usize> = (0..500).map(|_| rng.random_range(0..n)).collect();
        let msm = msm_estimate(&[d], tau).unwrap();
        for row in msm.transition_matrix.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn kmeans_assigns_to_nearest_center(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random(80, 2, &mut rng);
        let km = kmeans(&pts, k, seed, 50).unwrap();
        prop_assert_eq!(km.centers.nrows(), k);
        prop_assert_eq!(&km.assignments, &assign(&km.centers, &pts).unwrap());
        let inertia: f64 = (0..80)
            .map(|i| (pts.row(i) - km.centers.row(km.assignments[i])).norm_squared())
            .sum();
        prop_assert!((inertia - km.inertia).abs() <= 1e-9 * inertia.max(1.0));
    }

    #[test]
    fn tica_output_is_white(seed in any::<u64>(), m in 1usize..5) {
        let x = series(800, m, seed);
        let traj = Trajectory::new(x, 1.0, "p").unwrap();
        let model = tica_fit(std::slice::from_ref(&traj), 1, 1.0, false).unwrap();
        let y = &featurize(&model, &[traj]).unwrap()[0];
        let cov = covariances(y, y, true).unwrap();
        // pooled normalization differs from T - 1 by one frame only
        let id = DMatrix::identity(model.retained_dim, model.retained_dim);
        prop_assert!((&cov.c00 - id).abs().max() < 0.02);
    }
}
