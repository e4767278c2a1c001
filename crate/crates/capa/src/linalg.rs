//! Complex SVD built on the Hermitian eigendecomposition.
//!
//! nalgebra's bidiagonalization SVD mishandles complex matrices, so singular
//! systems are computed from the Hermitian eigenproblem of A^H A (or A A^H,
//! whichever is smaller), with singular values refined as ||A v_i|| and left
//! vectors recovered as A v_i / sigma_i.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Thin SVD `A = U diag(sigma) V^H` with `k = min(m, n)` columns, singular
/// values sorted in nonincreasing order. Columns of U paired with tiny
/// singular values are left as zero vectors.
pub fn complex_svd(a: &DMatrix<Complex64>) -> (DMatrix<Complex64>, Vec<f64>, DMatrix<Complex64>) {
    let (m, n) = a.shape();
    if m < n {
        let (v, sigma, u) = complex_svd(&a.adjoint());
        return (u, sigma, v);
    }
    // m >= n: eigendecompose the n x n Gram matrix A^H A.
    let gram = a.adjoint() * a;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());

    let mut u = DMatrix::<Complex64>::zeros(m, n);
    let mut v = DMatrix::<Complex64>::zeros(n, n);
    let mut sigma = vec![0.0; n];
    let mut sigma_max = 0.0f64;
    for (c, &i) in order.iter().enumerate() {
        let vi: DVector<Complex64> = eig.eigenvectors.column(i).into_owned();
        let avi = a * &vi;
        let s = avi.norm();
        sigma[c] = s;
        sigma_max = sigma_max.max(s);
        v.set_column(c, &vi);
        if s > f64::EPSILON * sigma_max.max(1.0_f64.min(s)) && s > 0.0 {
            u.set_column(c, &(avi / Complex64::new(s, 0.0)));
        }
    }
    // ||A v_i|| refinement can perturb the ordering for clustered values.
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());
    if idx.iter().enumerate().any(|(c, &i)| c != i) {
        let u2 = DMatrix::from_columns(&idx.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
        let v2 = DMatrix::from_columns(&idx.iter().map(|&i| v.column(i)).collect::<Vec<_>>());
        let s2: Vec<f64> = idx.iter().map(|&i| sigma[i]).collect();
        return (u2, s2, v2);
    }
    (u, sigma, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(u: &DMatrix<Complex64>, s: &[f64], v: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            s.len(),
            s.iter().map(|&x| Complex64::new(x, 0.0)),
        ));
        u * d * v.adjoint()
    }

    #[test]
    fn reconstructs_random_complex_matrices() {
        let mut state = 0x243f6a8885a308d3u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for &(m, n) in &[(5, 5), (8, 3), (3, 8), (12, 7)] {
            let a = DMatrix::from_fn(m, n, |_, _| Complex64::new(next(), next()));
            let (u, s, v) = complex_svd(&a);
            let err = (&a - reconstruct(&u, &s, &v)).norm() / a.norm();
            assert!(err < 1e-10, "({m},{n}): reconstruction error {err}");
            for w in s.windows(2) {
                assert!(w[0] >= w[1]);
            }
            // Orthonormal columns where sigma is nonzero.
            let uu = u.adjoint() * &u;
            for i in 0..s.len() {
                if s[i] > 1e-12 * s[0] {
                    assert!((uu[(i, i)].re - 1.0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn exact_rank_one() {
        let x = DVector::from_fn(6, |i, _| Complex64::new(1.0 + i as f64, -(i as f64)));
        let y = DVector::from_fn(4, |i, _| Complex64::new(0.5 * i as f64 - 1.0, 0.2));
        let a = &x * y.adjoint();
        let (_, s, _) = complex_svd(&a);
        assert!((s[0] - x.norm() * y.norm()).abs() < 1e-12 * s[0]);
        for &t in &s[1..] {
            assert!(t < 1e-12 * s[0], "trailing sigma {t}");
        }
    }
}
