//! Row-major dense f64 matrix with the handful of operations the lab needs.

use super::{NumericsError, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense row-major matrix. Vectors are represented as `1 x n` or `n x 1`.
///
/// Entries are expected to stay finite; operations that can produce
/// non-finite values under valid inputs check and report instead of
/// propagating NaNs silently.
#[derive(Debug, Clone, PartialEq)]
pub struct Array2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Array2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch {
                op: "from_vec",
                a: (rows, cols),
                b: (data.len(), 1),
            });
        }
        Ok(Array2 { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|v| v.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(NumericsError::ShapeMismatch {
                    op: "from_rows",
                    a: (1, c),
                    b: (1, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Array2 { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Array2 { rows, cols, data }
    }

    pub fn eye(n: usize) -> Self {
        Array2::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Standard-normal entries drawn in row-major order from `rng`.
    pub fn randn(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(rng.sample::<f64, _>(StandardNormal));
        }
        Array2 { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn t(&self) -> Array2 {
        let mut out = Array2::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * b`.
    pub fn matmul(&self, b: &Array2) -> Result<Array2> {
        if self.cols != b.rows {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                a: self.shape(),
                b: b.shape(),
            });
        }
        let mut out = Array2::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (k, &aik) in arow.iter().enumerate() {
                // Skipping zero coefficients keeps products against all-zero
                // blocks (frozen W12) bit-identical to leaving them out.
                if aik == 0.0 {
                    continue;
                }
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        Ok(out)
    }

    /// `self * b^T` without materializing the transpose.
    pub fn matmul_nt(&self, b: &Array2) -> Result<Array2> {
        if self.cols != b.cols {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul_nt",
                a: self.shape(),
                b: b.shape(),
            });
        }
        let mut out = Array2::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (j, o) in orow.iter_mut().enumerate() {
                *o = dot(arow, b.row(j));
            }
        }
        Ok(out)
    }

    /// `self^T * b` without materializing the transpose.
    pub fn matmul_tn(&self, b: &Array2) -> Result<Array2> {
        if self.rows != b.rows {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul_tn",
                a: self.shape(),
                b: b.shape(),
            });
        }
        let mut out = Array2::zeros(self.cols, b.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let brow = b.row(i);
            for (k, &aik) in arow.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let orow = &mut out.data[k * b.cols..(k + 1) * b.cols];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, b: &Array2) -> Result<Array2> {
        self.zip_with("add", b, |x, y| x + y)
    }

    pub fn sub(&self, b: &Array2) -> Result<Array2> {
        self.zip_with("sub", b, |x, y| x - y)
    }

    pub fn hadamard(&self, b: &Array2) -> Result<Array2> {
        self.zip_with("hadamard", b, |x, y| x * y)
    }

    fn zip_with(&self, op: &'static str, b: &Array2, f: impl Fn(f64, f64) -> f64) -> Result<Array2> {
        if self.shape() != b.shape() {
            return Err(NumericsError::ShapeMismatch {
                op,
                a: self.shape(),
                b: b.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Array2 {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Array2 {
        Array2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * c).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array2 {
        Array2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self += c * b`, used by gradient accumulation and optimizers.
    pub fn add_assign_scaled(&mut self, b: &Array2, c: f64) -> Result<()> {
        if self.shape() != b.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "add_assign_scaled",
                a: self.shape(),
                b: b.shape(),
            });
        }
        for (x, &y) in self.data.iter_mut().zip(&b.data) {
            *x += c * y;
        }
        Ok(())
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, b: &Array2) -> Result<f64> {
        if self.shape() != b.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "max_abs_diff",
                a: self.shape(),
                b: b.shape(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&b.data)
            .fold(0.0, |m, (&x, &y)| m.max((x - y).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Exact bit equality, distinguishing 0.0 from -0.0 and all NaN payloads.
    pub fn bit_eq(&self, b: &Array2) -> bool {
        self.shape() == b.shape()
            && self
                .data
                .iter()
                .zip(&b.data)
                .all(|(x, y)| x.to_bits() == y.to_bits())
    }
}

/// Dot product with four independent accumulators; fixed evaluation order
/// keeps results reproducible while letting the compiler vectorize.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let a4 = &a[i * 4..i * 4 + 4];
        let b4 = &b[i * 4..i * 4 + 4];
        acc[0] += a4[0] * b4[0];
        acc[1] += a4[1] * b4[1];
        acc[2] += a4[2] * b4[2];
        acc[3] += a4[3] * b4[3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Array2::randn(5, 7, &mut rng);
        let b = Array2::randn(7, 3, &mut rng);
        let c = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..7 {
                    s += a.at(i, k) * b.at(k, j);
                }
                assert!((c.at(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_is_an_error() {
        let a = Array2::zeros(2, 3);
        let b = Array2::zeros(4, 2);
        assert!(matches!(
            a.matmul(&b),
            Err(NumericsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn transposed_variants_agree_with_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Array2::randn(4, 6, &mut rng);
        let b = Array2::randn(5, 6, &mut rng);
        let nt = a.matmul_nt(&b).unwrap();
        let explicit = a.matmul(&b.t()).unwrap();
        assert!(nt.max_abs_diff(&explicit).unwrap() < 1e-12);

        let c = Array2::randn(4, 5, &mut rng);
        let tn = a.matmul_tn(&c).unwrap();
        let explicit = a.t().matmul(&c).unwrap();
        assert!(tn.max_abs_diff(&explicit).unwrap() < 1e-12);
    }

    #[test]
    fn randn_is_reproducible_per_seed() {
        let a = Array2::randn(3, 3, &mut ChaCha8Rng::seed_from_u64(42));
        let b = Array2::randn(3, 3, &mut ChaCha8Rng::seed_from_u64(42));
        assert!(a.bit_eq(&b));
        let c = Array2::randn(3, 3, &mut ChaCha8Rng::seed_from_u64(43));
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn empty_dimensions_are_usable() {
        let a = Array2::zeros(3, 0);
        let b = Array2::zeros(0, 4);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), (3, 4));
        assert_eq!(c.max_abs(), 0.0);
    }
}
