//! One-sided Jacobi singular value decomposition and a power-iteration
//! spectral norm, both fully deterministic.

use super::{Array2, NumericsError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG used throughout the crate. One seed, one stream.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Thin SVD `A = U * diag(S) * Vt` with `k = min(rows, cols)` columns.
///
/// Singular values are sorted in descending order (stable under ties).
/// Sign convention: the first nonzero entry of each left singular vector is
/// non-negative, with the matching right vector flipped alongside, so the
/// factorization of a given matrix is unique and reproducible. Columns whose
/// singular value is exactly zero have a zero left singular vector.
pub struct SvdResult {
    pub u: Array2,
    pub s: Vec<f64>,
    pub vt: Array2,
}

impl SvdResult {
    /// `U * diag(S) * Vt`, for reconstruction checks.
    pub fn reconstruct(&self) -> Result<Array2> {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, &s) in self.s.iter().enumerate() {
                us.set(i, j, us.at(i, j) * s);
            }
        }
        us.matmul(&self.vt)
    }

    /// Number of singular values above `max(rows, cols) * s[0] * f64::EPSILON`.
    pub fn rank(&self, shape: (usize, usize)) -> usize {
        let Some(&smax) = self.s.first() else {
            return 0;
        };
        let tol = shape.0.max(shape.1) as f64 * smax * f64::EPSILON;
        self.s.iter().filter(|&&s| s > tol).count()
    }
}

/// Convergence threshold for column orthogonality, relative to the column
/// norms of the pair being examined.
const JACOBI_TOL: f64 = 1e-14;

pub fn svd(a: &Array2) -> Result<SvdResult> {
    if a.rows() < a.cols() {
        // Decompose the transpose and swap factors: A^T = U S V^T gives
        // A = V S U^T.
        let t = svd(&a.t())?;
        let mut u = t.vt.t();
        let mut vt = t.u.t();
        fix_signs(&mut u, &mut vt);
        return Ok(SvdResult { u, s: t.s, vt });
    }

    let (m, n) = a.shape();
    let mut b = a.clone(); // columns get orthogonalized in place
    let mut v = Array2::eye(n);

    // One-sided Jacobi: rotate column pairs of B (and rows of V^T via V)
    // until all pairs are numerically orthogonal.
    let max_sweeps = 100 * m.max(n).max(1);
    let mut sweeps = 0;
    loop {
        let mut max_off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (bp, bq) = (b.at(i, p), b.at(i, q));
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                let denom = (alpha * beta).sqrt();
                if denom == 0.0 || gamma.abs() <= JACOBI_TOL * denom {
                    continue;
                }
                max_off = max_off.max(gamma.abs() / denom);
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut b, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        sweeps += 1;
        if max_off == 0.0 {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(NumericsError::SvdNoConvergence {
                rows: m,
                cols: n,
                sweeps,
                off: max_off,
            });
        }
    }

    // Column norms are the singular values; sort descending with a stable
    // permutation so exact ties keep their original order.
    let mut norms: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| b.at(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).expect("finite norms"));

    let mut u = Array2::zeros(m, n);
    let mut vt = Array2::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (out_j, &src_j) in order.iter().enumerate() {
        let sigma = norms[src_j];
        s.push(sigma);
        if sigma > 0.0 {
            for i in 0..m {
                u.set(i, out_j, b.at(i, src_j) / sigma);
            }
        }
        for i in 0..n {
            vt.set(out_j, i, v.at(i, src_j));
        }
    }
    norms.clear();

    fix_signs(&mut u, &mut vt);
    Ok(SvdResult { u, s, vt })
}

fn rotate_cols(m: &mut Array2, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.rows() {
        let (xp, xq) = (m.at(i, p), m.at(i, q));
        m.set(i, p, c * xp - s * xq);
        m.set(i, q, s * xp + c * xq);
    }
}

/// Flips (u_j, v_j) pairs so the first nonzero entry of each column of U is
/// positive.
fn fix_signs(u: &mut Array2, vt: &mut Array2) {
    for j in 0..u.cols() {
        let mut sign = 0.0;
        for i in 0..u.rows() {
            let x = u.at(i, j);
            if x != 0.0 {
                sign = x.signum();
                break;
            }
        }
        if sign < 0.0 {
            for i in 0..u.rows() {
                u.set(i, j, -u.at(i, j));
            }
            for i in 0..vt.cols() {
                vt.set(j, i, -vt.at(j, i));
            }
        }
    }
}

/// Largest singular value via power iteration on `A^T A`, converged to a
/// relative change of 1e-10. The start vector is seeded, so the estimate is
/// reproducible.
pub fn spectral_norm(a: &Array2, seed: u64) -> f64 {
    if a.rows() == 0 || a.cols() == 0 {
        return 0.0;
    }
    let mut rng = init_rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut v = Array2::randn(a.cols(), 1, &mut rng);
    let mut sigma = 0.0f64;
    for _ in 0..100_000 {
        let av = a.matmul(&v).expect("shape checked");
        let atav = a.matmul_tn(&av).expect("shape checked");
        let norm = atav.frob_norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = atav.scale(1.0 / norm);
        let next = a.matmul(&v).expect("shape checked").frob_norm();
        if (next - sigma).abs() <= 1e-10 * next.max(1.0) {
            return next;
        }
        sigma = next;
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::init_rng;

    fn assert_orthonormal_cols(m: &Array2, tol: f64) {
        for a in 0..m.cols() {
            for b in a..m.cols() {
                let dot: f64 = (0..m.rows()).map(|i| m.at(i, a) * m.at(i, b)).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!(
                    (dot - expect).abs() < tol,
                    "columns {a},{b}: {dot} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn reconstructs_random_matrices() {
        let mut rng = init_rng(1);
        for &(m, n) in &[(5, 5), (8, 3), (3, 8), (1, 6), (6, 1)] {
            let a = Array2::randn(m, n, &mut rng);
            let r = svd(&a).unwrap();
            let rec = r.reconstruct().unwrap();
            let rel = rec.sub(&a).unwrap().frob_norm() / a.frob_norm();
            assert!(rel < 1e-8, "{m}x{n}: relative error {rel:.3e}");
            assert_orthonormal_cols(&r.u, 1e-10);
            assert_orthonormal_cols(&r.vt.t(), 1e-10);
            for w in r.s.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn matches_construction_with_known_singular_values() {
        // Build A = U0 diag(S0) V0^T from seeded orthonormal factors
        // (Gram-Schmidt on random matrices) and check the recovered values.
        let mut rng = init_rng(2);
        let u0 = gram_schmidt(&Array2::randn(6, 4, &mut rng));
        let v0 = gram_schmidt(&Array2::randn(4, 4, &mut rng));
        let s0 = [5.0, 2.5, 1.0, 0.25];
        let mut us = u0.clone();
        for i in 0..6 {
            for j in 0..4 {
                us.set(i, j, us.at(i, j) * s0[j]);
            }
        }
        let a = us.matmul(&v0.t()).unwrap();
        let r = svd(&a).unwrap();
        for (got, want) in r.s.iter().zip(s0) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    fn gram_schmidt(a: &Array2) -> Array2 {
        let mut q = a.clone();
        for j in 0..q.cols() {
            for k in 0..j {
                let proj: f64 = (0..q.rows()).map(|i| q.at(i, j) * q.at(i, k)).sum();
                for i in 0..q.rows() {
                    q.set(i, j, q.at(i, j) - proj * q.at(i, k));
                }
            }
            let norm: f64 = (0..q.rows())
                .map(|i| q.at(i, j).powi(2))
                .sum::<f64>()
                .sqrt();
            for i in 0..q.rows() {
                q.set(i, j, q.at(i, j) / norm);
            }
        }
        q
    }

    #[test]
    fn diagonal_matrix_keeps_order_and_signs() {
        let a = Array2::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = svd(&a).unwrap();
        assert!((r.s[0] - 3.0).abs() < 1e-12);
        assert!((r.s[1] - 1.0).abs() < 1e-12);
        assert!((r.u.at(0, 0) - 1.0).abs() < 1e-12);
        assert!((r.vt.at(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_outer_product_has_single_singular_value() {
        let u = [1.0, -2.0, 2.0]; // norm 3
        let v = [2.0, 1.0, 0.0, -2.0]; // norm 3
        let a = Array2::from_fn(3, 4, |i, j| u[i] * v[j]);
        let r = svd(&a).unwrap();
        assert!((r.s[0] - 9.0).abs() < 1e-10);
        for &s in &r.s[1..] {
            assert!(s.abs() < 1e-10);
        }
        assert_eq!(r.rank((3, 4)), 1);
    }

    #[test]
    fn identity_has_stable_unit_spectrum() {
        let r = svd(&Array2::eye(4)).unwrap();
        for &s in &r.s {
            assert!((s - 1.0).abs() < 1e-14);
        }
        // Stable sort on exact ties keeps the identity's column order.
        assert!(r.u.max_abs_diff(&Array2::eye(4)).unwrap() < 1e-14);
        assert!(r.vt.max_abs_diff(&Array2::eye(4)).unwrap() < 1e-14);
    }

    #[test]
    fn all_zero_matrix_has_zero_rank() {
        let r = svd(&Array2::zeros(3, 2)).unwrap();
        assert_eq!(r.s, vec![0.0, 0.0]);
        assert_eq!(r.rank((3, 2)), 0);
        assert_eq!(r.reconstruct().unwrap().max_abs(), 0.0);
    }

    #[test]
    fn svd_is_deterministic() {
        let a = Array2::randn(7, 5, &mut init_rng(3));
        let r1 = svd(&a).unwrap();
        let r2 = svd(&a).unwrap();
        assert!(r1.u.bit_eq(&r2.u));
        assert!(r1.vt.bit_eq(&r2.vt));
        assert_eq!(r1.s, r2.s);
    }

    #[test]
    fn spectral_norm_matches_largest_singular_value() {
        let mut rng = init_rng(4);
        for trial in 0..10 {
            let a = Array2::randn(6, 4, &mut rng);
            let r = svd(&a).unwrap();
            let p = spectral_norm(&a, trial);
            assert!(
                (p - r.s[0]).abs() < 1e-8 * r.s[0],
                "power {p} vs jacobi {}",
                r.s[0]
            );
        }
    }
}
