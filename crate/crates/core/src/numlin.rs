//! Dense linear algebra kernels.
//!
//! Symmetric eigendecomposition, thin SVD, truncated inverse square roots and
//! pseudo-inverses, plus a small general (non-symmetric) eigensolver used for
//! Koopman and transition matrices. Everything is `f64`; decompositions are
//! backed by `nalgebra` and post-processed into descending order.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_ITER: usize = 10_000;

/// Default relative eigenvalue cutoff for whitening and pseudo-inverses.
pub const DEFAULT_EPS_REL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Descending.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal columns, paired with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl SymmetricEigen {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues);
        scaled * self.eigenvectors.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct SingularDecomposition {
    pub left: DMatrix<f64>,
    /// Nonnegative, descending.
    pub singular_values: DVector<f64>,
    pub right: DMatrix<f64>,
}

impl SingularDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.left * DMatrix::from_diagonal(&self.singular_values) * self.right.transpose()
    }
}

fn ensure_square(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "{what} requires a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn ensure_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{what}: non-finite matrix entry")));
    }
    Ok(())
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn frobenius_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigendecomposition of a symmetric matrix. The input is symmetrized first.
pub fn sym_eig(a: &DMatrix<f64>) -> Result<SymmetricEigen> {
    ensure_square(a, "sym_eig")?;
    ensure_finite(a, "sym_eig")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SymmetricEigen {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let sym = symmetrize(a);
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, MAX_ITER).ok_or(
        Error::NoConvergence {
            routine: "symmetric eigendecomposition",
            iterations: MAX_ITER,
        },
    )?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Thin SVD with singular values in descending order, computed by one-sided
/// (Hestenes) Jacobi rotations.
pub fn svd(a: &DMatrix<f64>) -> Result<SingularDecomposition> {
    ensure_finite(a, "svd")?;
    let (rows, cols) = a.shape();
    if rows < cols {
        let t = svd(&a.transpose())?;
        return Ok(SingularDecomposition {
            left: t.right,
            singular_values: t.singular_values,
            right: t.left,
        });
    }
    let p = cols;
    if p == 0 {
        return Ok(SingularDecomposition {
            left: DMatrix::zeros(rows, 0),
            singular_values: DVector::zeros(0),
            right: DMatrix::zeros(cols, 0),
        });
    }
    let mut u = a.clone();
    let mut v = DMatrix::<f64>::identity(p, p);
    let tol = JACOBI_TOL * (rows as f64).sqrt();
    // columns below this norm are numerically zero next to the largest one
    let negligible = f64::EPSILON * frobenius_norm(a);
    let negligible_sq = negligible * negligible;
    let mut converged = false;
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for i in 0..p {
            for j in i + 1..p {
                let alpha = u.column(i).norm_squared();
                let beta = u.column(j).norm_squared();
                let gamma = u.column(i).dot(&u.column(j));
                if gamma == 0.0
                    || alpha <= negligible_sq
                    || beta <= negligible_sq
                    || gamma.abs() <= tol * alpha.sqrt() * beta.sqrt()
                {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                // the pair is orthogonal to working precision (or underflows)
                if !(t.abs() > 0.0) || !t.is_finite() {
                    continue;
                }
                rotated = true;
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut u, i, j, c, s);
                rotate_columns(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            routine: "singular value decomposition",
            iterations: JACOBI_SWEEPS,
        });
    }

    let norms: Vec<f64> = (0..p).map(|j| u.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let singular_values = DVector::from_iterator(p, order.iter().map(|&i| norms[i]));
    let right = DMatrix::from_fn(cols, p, |r, c| v[(r, order[c])]);
    let mut left = DMatrix::zeros(rows, p);
    let mut null_cols = Vec::new();
    for (c, &i) in order.iter().enumerate() {
        if norms[i] > 0.0 && norms[i] > negligible {
            left.set_column(c, &(u.column(i) / norms[i]));
        } else {
            null_cols.push(c);
        }
    }
    complete_orthonormal(&mut left, &null_cols);
    Ok(SingularDecomposition {
        left,
        singular_values,
        right,
    })
}

const JACOBI_SWEEPS: usize = 100;
const JACOBI_TOL: f64 = f64::EPSILON;

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (a, b) = (m[(r, i)], m[(r, j)]);
        m[(r, i)] = c * a - s * b;
        m[(r, j)] = s * a + c * b;
    }
}

/// Fills the listed columns with unit vectors orthogonal to all others.
fn complete_orthonormal(m: &mut DMatrix<f64>, fill: &[usize]) {
    let n = m.nrows();
    let mut candidate = 0;
    for &c in fill {
        while candidate < n {
            let mut e = DVector::zeros(n);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for k in 0..m.ncols() {
                    if k == c || (fill.contains(&k) && m.column(k).norm() == 0.0) {
                        continue;
                    }
                    let proj = m.column(k).dot(&e);
                    e -= m.column(k) * proj;
                }
            }
            let norm = e.norm();
            if norm > 0.5 {
                m.set_column(c, &(e / norm));
                break;
            }
        }
    }
}

/// Spectral function of a PSD matrix restricted to its numerically
/// significant eigenspace.
#[derive(Debug, Clone)]
pub struct Truncated {
    pub matrix: DMatrix<f64>,
    /// Number of eigenvalues kept.
    pub rank: usize,
}

fn spectral_trunc(
    a: &DMatrix<f64>,
    eps_rel: f64,
    what: &'static str,
    f: impl Fn(f64) -> f64,
) -> Result<Truncated> {
    ensure_square(a, what)?;
    if !(eps_rel > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps_rel must be positive, got {eps_rel}"
        )));
    }
    let eig = sym_eig(a)?;
    let n = a.nrows();
    let lmax = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = eps_rel * lmax;
    let kept: Vec<usize> = (0..n)
        .filter(|&i| lmax > 0.0 && eig.eigenvalues[i] >= cutoff)
        .collect();
    if kept.is_empty() {
        return Err(Error::RankZero { what });
    }
    let mut out = DMatrix::zeros(n, n);
    for &i in &kept {
        let q = eig.eigenvectors.column(i);
        out += (q * q.transpose()) * f(eig.eigenvalues[i]);
    }
    Ok(Truncated {
        matrix: out,
        rank: kept.len(),
    })
}

/// `A^{-1/2}` on the eigenspace with eigenvalues `>= eps_rel * lambda_max`;
/// the remaining directions contribute zero.
pub fn inv_sqrt_trunc(a: &DMatrix<f64>, eps_rel: f64) -> Result<Truncated> {
    spectral_trunc(a, eps_rel, "matrix", |l| 1.0 / l.sqrt())
}

/// Truncated pseudo-inverse of a symmetric PSD matrix, same cutoff rule as
/// [`inv_sqrt_trunc`].
pub fn pinv_trunc(a: &DMatrix<f64>, eps_rel: f64) -> Result<Truncated> {
    spectral_trunc(a, eps_rel, "matrix", |l| 1.0 / l)
}

/// Like [`inv_sqrt_trunc`] but names the matrix in the rank-zero error.
pub fn inv_sqrt_named(a: &DMatrix<f64>, eps_rel: f64, what: &'static str) -> Result<Truncated> {
    spectral_trunc(a, eps_rel, what, |l| 1.0 / l.sqrt())
}

pub fn pinv_named(a: &DMatrix<f64>, eps_rel: f64, what: &'static str) -> Result<Truncated> {
    spectral_trunc(a, eps_rel, what, |l| 1.0 / l)
}

/// Eigenvalues and right eigenvectors of a general real square matrix.
#[derive(Debug, Clone)]
pub struct GeneralEigen {
    /// Sorted by modulus, descending; for conjugate pairs the member with
    /// positive imaginary part comes first.
    pub eigenvalues: Vec<Complex64>,
    /// Column `i` pairs with `eigenvalues[i]`, scaled so its entry of largest
    /// modulus equals exactly 1.
    pub eigenvectors: DMatrix<Complex64>,
}

fn modulus_order(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

/// General eigendecomposition: eigenvalues from the real Schur form,
/// eigenvectors by shifted inverse iteration.
///
/// Only the leading `n_vectors` eigenvectors (after sorting) are computed;
/// pass `a.nrows()` for all of them.
pub fn general_eig(a: &DMatrix<f64>, n_vectors: usize) -> Result<GeneralEigen> {
    ensure_square(a, "general_eig")?;
    ensure_finite(a, "general_eig")?;
    let n = a.nrows();
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, MAX_ITER).ok_or(
        Error::NoConvergence {
            routine: "Schur decomposition",
            iterations: MAX_ITER,
        },
    )?;
    let mut eigenvalues: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    for l in &mut eigenvalues {
        if l.im.abs() <= 1e-13 * scale {
            l.im = 0.0;
        }
    }
    eigenvalues.sort_by(modulus_order);

    let n_vectors = n_vectors.min(n);
    let mut vectors = DMatrix::<Complex64>::zeros(n, n_vectors);
    let ac: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));
    let group_tol = 1e-9 * scale;
    let mut i = 0;
    while i < n_vectors {
        let lambda = eigenvalues[i];
        let mut group = 1;
        while i + group < n && (eigenvalues[i + group] - lambda).norm() <= group_tol {
            group += 1;
        }
        let block = inverse_iteration(&ac, lambda, group, scale)?;
        for g in 0..group.min(n_vectors - i) {
            let mut v = block.column(g).into_owned();
            let pivot = v
                .iter()
                .copied()
                .max_by(|p, q| p.norm().total_cmp(&q.norm()))
                .unwrap_or(Complex64::new(1.0, 0.0));
            v /= pivot;
            if lambda.im == 0.0 {
                for c in v.iter_mut() {
                    c.im = 0.0;
                }
            }
            vectors.set_column(i + g, &v);
        }
        i += group;
    }
    Ok(GeneralEigen {
        eigenvalues,
        eigenvectors: vectors,
    })
}

/// Orthonormal basis of the (approximate) eigenspace of `a` at `lambda` with
/// dimension `count`.
fn inverse_iteration(
    a: &DMatrix<Complex64>,
    lambda: Complex64,
    count: usize,
    scale: f64,
) -> Result<DMatrix<Complex64>> {
    let n = a.nrows();
    let mut shift = 1e-10 * scale;
    let lu = loop {
        let mut m = a.clone();
        for d in 0..n {
            m[(d, d)] -= lambda + Complex64::new(shift, 0.0);
        }
        let lu = m.lu();
        if lu.is_invertible() {
            break lu;
        }
        shift *= 10.0;
        if shift > scale {
            return Err(Error::Numerical("eigenvector iteration is singular".into()));
        }
    };
    let mut block = DMatrix::from_fn(n, count, |r, c| {
        Complex64::new(1.0 + (((r + 1) * (c + 3)) as f64).sin() * 0.5, 0.0)
    });
    for _ in 0..4 {
        block = lu
            .solve(&block)
            .ok_or_else(|| Error::Numerical("eigenvector iteration is singular".into()))?;
        for c in 0..count {
            for _ in 0..2 {
                for k in 0..c {
                    let proj = block.column(k).dotc(&block.column(c));
                    let prev = block.column(k).into_owned();
                    let mut col = block.column_mut(c);
                    col -= prev * proj;
                }
            }
            let norm = block.column(c).norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Numerical("eigenvector iteration collapsed".into()));
            }
            block.column_mut(c).unscale_mut(norm);
        }
    }
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        symmetrize(&random_matrix(n, n, seed))
    }

    fn random_orthonormal(n: usize, seed: u64) -> DMatrix<f64> {
        random_matrix(n, n, seed).qr().q()
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn diagonal_eigenpairs_descend() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        let e = sym_eig(&a).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[3.0, 2.0]);
        assert!((e.eigenvectors[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert!((e.eigenvectors[(0, 1)].abs() - 1.0).abs() < 1e-15);
        assert!(e.eigenvectors[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn random_reconstruction() {
        let a = random_symmetric(6, 11);
        let e = sym_eig(&a).unwrap();
        let err = frobenius_norm(&(e.reconstruct() - &a)) / frobenius_norm(&a);
        assert!(err < 1e-10, "{err}");
        let qtq = e.eigenvectors.transpose() * &e.eigenvectors;
        assert!(frobenius_norm(&(qtq - DMatrix::identity(6, 6))) < 1e-10);
    }

    #[test]
    fn non_square_rejected() {
        let a = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(sym_eig(&a), Err(Error::Dimension(_))));
    }

    #[test]
    fn inv_sqrt_identity_and_diagonal() {
        let r = inv_sqrt_trunc(&DMatrix::identity(3, 3), 1e-12).unwrap();
        assert!(frobenius_norm(&(r.matrix - DMatrix::identity(3, 3))) < 1e-15);
        assert_eq!(r.rank, 3);

        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = inv_sqrt_trunc(&a, DEFAULT_EPS_REL).unwrap();
        assert!((r.matrix[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((r.matrix[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!(r.matrix[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn inv_sqrt_truncates_tiny_eigenvalue() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1e-20]));
        let r = inv_sqrt_trunc(&a, 1e-12).unwrap();
        assert_eq!(r.rank, 1);
        assert!((r.matrix[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(r.matrix[(1, 1)], 0.0);
    }

    #[test]
    fn inv_sqrt_rank_zero() {
        let a = DMatrix::<f64>::zeros(3, 3);
        assert!(matches!(
            inv_sqrt_trunc(&a, 1e-10),
            Err(Error::RankZero { .. })
        ));
    }

    #[test]
    fn inv_sqrt_whitening_gives_projector() {
        // rank-3 PSD matrix in 5 dimensions
        let b = random_matrix(5, 3, 5);
        let a = &b * b.transpose();
        let w = inv_sqrt_trunc(&a, 1e-10).unwrap();
        assert_eq!(w.rank, 3);
        let p = &w.matrix * &a * &w.matrix;
        assert!(frobenius_norm(&(&p * &p - &p)) < 1e-8);
        assert!((p.trace() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn svd_simple_cases() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let s = svd(&a).unwrap();
        assert!((s.singular_values[0] - 3.0).abs() < 1e-15);
        assert!((s.singular_values[1] - 1.0).abs() < 1e-15);

        let s = svd(&DMatrix::zeros(3, 2)).unwrap();
        assert!(s.singular_values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn svd_frobenius_identity() {
        let a = random_matrix(5, 4, 3);
        let s = svd(&a).unwrap();
        let fro2 = a.iter().map(|v| v * v).sum::<f64>();
        let sig2 = s.singular_values.iter().map(|v| v * v).sum::<f64>();
        assert!((fro2 - sig2).abs() < 1e-10);
        assert!(frobenius_norm(&(s.reconstruct() - &a)) < 1e-10);
    }

    #[test]
    fn svd_rank_deficient_regression() {
        let s = DMatrix::from_column_slice(
            3,
            3,
            &[
                0.583362942458751,
                -0.22469773785049466,
                -0.3586652046082557,
                -0.23279966925626283,
                0.49091466770165026,
                -0.25811499844538877,
                -0.35056327320249375,
                -0.2662169298511462,
                0.6167802030536405,
            ],
        );
        let d = svd(&s).unwrap();
        let e = sym_eig(&(s.transpose() * &s)).unwrap();
        assert!((d.singular_values[0] - e.eigenvalues[0].sqrt()).abs() < 1e-12);
        assert!(frobenius_norm(&(d.reconstruct() - &s)) < 1e-12);
    }

    #[test]
    fn svd_graded_tiny_singular_values() {
        let q = random_orthonormal(8, 1);
        let r = random_orthonormal(8, 2);
        let sig = DVector::from_vec(vec![1.0, 0.5, 0.2, 1e-17, 1e-33, 1e-50, 1e-88, 0.0]);
        let a = &q * DMatrix::from_diagonal(&sig) * r.transpose();
        let d = svd(&a).unwrap();
        assert!(frobenius_norm(&(d.reconstruct() - &a)) < 1e-14);
        let utu = d.left.transpose() * &d.left;
        assert!(frobenius_norm(&(utu - DMatrix::identity(8, 8))) < 1e-12);
        for i in 0..3 {
            assert!((d.singular_values[i] - sig[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn general_eig_diagonal_and_rotation() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.9, 0.2]));
        let e = general_eig(&a, 3).unwrap();
        assert!((e.eigenvalues[0].re + 0.9).abs() < 1e-14);
        assert!((e.vectors_real(0)[1] - 1.0).abs() < 1e-12);

        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        let e = general_eig(&rot, 2).unwrap();
        assert!((e.eigenvalues[0].im - 0.5).abs() < 1e-14);
        assert!((e.eigenvalues[1].im + 0.5).abs() < 1e-14);
        let ac = rot.map(|v| Complex64::new(v, 0.0));
        for i in 0..2 {
            let v = e.eigenvectors.column(i).into_owned();
            let r = &ac * &v - &v * e.eigenvalues[i];
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn general_eig_repeated_eigenvalue() {
        let e = general_eig(&DMatrix::identity(3, 3), 3).unwrap();
        let v = e.eigenvectors.map(|c| c.re);
        // independent columns
        let d = sym_eig(&(v.transpose() * &v)).unwrap();
        assert!(d.eigenvalues[2] > 1e-6);
    }

    impl GeneralEigen {
        fn vectors_real(&self, i: usize) -> Vec<f64> {
            self.eigenvectors.column(i).iter().map(|c| c.re).collect()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prop_sym_eig_reconstructs(n in 1usize..9, seed in any::<u64>()) {
            let a = random_symmetric(n, seed);
            let e = sym_eig(&a).unwrap();
            let err = frobenius_norm(&(e.reconstruct() - &a)) / frobenius_norm(&a).max(1e-300);
            prop_assert!(err < 1e-10);
            for w in e.eigenvalues.as_slice().windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn prop_svd_orthogonal_invariance(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
            let a = random_matrix(rows, cols, seed);
            let q1 = random_orthonormal(rows, seed ^ 1);
            let q2 = random_orthonormal(cols, seed ^ 2);
            let s0 = svd(&a).unwrap();
            let s1 = svd(&(q1 * &a * q2)).unwrap();
            for (x, y) in s0.singular_values.iter().zip(s1.singular_values.iter()) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            for w in s0.singular_values.as_slice().windows(2) {
                prop_assert!(w[0] >= w[1] && w[1] >= 0.0);
            }
        }

        #[test]
        fn prop_general_eig_residual(n in 1usize..7, seed in any::<u64>()) {
            let a = random_matrix(n, n, seed);
            let e = general_eig(&a, n).unwrap();
            let ac = a.map(|v| Complex64::new(v, 0.0));
            for i in 0..n {
                let v = e.eigenvectors.column(i).into_owned();
                let r = &ac * &v - &v * e.eigenvalues[i];
                prop_assert!(r.norm() < 1e-8, "residual {}", r.norm());
            }
        }
    }
}
