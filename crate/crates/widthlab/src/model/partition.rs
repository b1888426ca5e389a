//! Block-partitioned expansion of a single linear module.

use super::{InitKind, Result};
use crate::numerics::{svd, Array2};
use rand::Rng;

/// A linear module after width expansion. With input split `[x; x_up]` and
/// output split `[y; y_up]`:
///
/// ```text
/// y    = W   x + W12 x_up
/// y_up = W21 x + W22 x_up
/// ```
///
/// `W` keeps the base weights and is never trained. `W12` is zero right
/// after expansion; while it stays zero the original output is exactly the
/// base module's output. `W21` and `W22` are always trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedLinear {
    pub w: Array2,
    pub w12: Array2,
    pub w21: Array2,
    pub w22: Array2,
}

impl PartitionedLinear {
    pub fn rows_up(&self) -> usize {
        self.w21.rows()
    }

    pub fn cols_up(&self) -> usize {
        self.w12.cols()
    }

    /// True while the expansion cannot influence the original output.
    pub fn preserving(&self) -> bool {
        self.w12.max_abs() == 0.0
    }
}

/// Expands `w` by `rows_up` output rows and `cols_up` input columns.
///
/// Returns the partition plus an optional warning when an `svd` strategy
/// could not fill the requested block at full rank (the remainder is
/// zero-filled).
pub fn expand_linear(
    w: &Array2,
    rows_up: usize,
    cols_up: usize,
    init_w21: InitKind,
    init_w22: InitKind,
    rng: &mut impl Rng,
) -> Result<(PartitionedLinear, Option<String>)> {
    let w12 = Array2::zeros(w.rows(), cols_up);
    let (w21, warn21) = init_block(w, rows_up, w.cols(), init_w21, rng)?;
    let (w22, warn22) = init_block(w, rows_up, cols_up, init_w22, rng)?;
    let warning = match (warn21, warn22) {
        (None, None) => None,
        (a, b) => Some(
            [a, b]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join("; "),
        ),
    };
    Ok((
        PartitionedLinear {
            w: w.clone(),
            w12,
            w21,
            w22,
        },
        warning,
    ))
}

fn init_block(
    w: &Array2,
    rows: usize,
    cols: usize,
    kind: InitKind,
    rng: &mut impl Rng,
) -> Result<(Array2, Option<String>)> {
    match kind {
        InitKind::Zero => Ok((Array2::zeros(rows, cols), None)),
        InitKind::Random => {
            // He-style scale from the block's input width.
            let std = if cols > 0 { (2.0 / cols as f64).sqrt() } else { 0.0 };
            Ok((Array2::randn(rows, cols, rng).scale(std), None))
        }
        InitKind::Svd => init_svd_block(w, rows, cols),
    }
}

/// Rank-truncated copy of `w` cropped (or zero-padded) to the target shape.
///
/// Takes `k = min(target_rows, target_cols, rank(w))` dominant singular
/// directions, reconstructs, and crops. When the available rank is short of
/// the requested block, the remaining directions contribute nothing and a
/// warning describes the shortfall.
pub fn init_svd_block(
    w: &Array2,
    target_rows: usize,
    target_cols: usize,
) -> Result<(Array2, Option<String>)> {
    let mut out = Array2::zeros(target_rows, target_cols);
    if target_rows == 0 || target_cols == 0 || w.max_abs() == 0.0 {
        let warning = (w.max_abs() == 0.0 && target_rows * target_cols > 0)
            .then(|| "svd init of an all-zero weight produced a zero block".to_string());
        return Ok((out, warning));
    }
    let decomp = svd(w)?;
    let rank = decomp.rank(w.shape());
    let k = target_rows.min(target_cols).min(rank);
    let copy_rows = target_rows.min(w.rows());
    let copy_cols = target_cols.min(w.cols());
    for i in 0..copy_rows {
        for j in 0..copy_cols {
            let mut v = 0.0;
            for r in 0..k {
                v += decomp.u.at(i, r) * decomp.s[r] * decomp.vt.at(r, j);
            }
            out.set(i, j, v);
        }
    }
    let warning = (k < target_rows.min(target_cols)).then(|| {
        format!(
            "svd init for a {target_rows}x{target_cols} block found only rank {k}; \
             remaining directions are zero-filled"
        )
    });
    Ok((out, warning))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::init_rng;

    #[test]
    fn diag_weight_svd_init_keeps_dominant_direction() {
        let w = Array2::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (block, warn) = init_svd_block(&w, 1, 2).unwrap();
        assert!(warn.is_none());
        assert!((block.at(0, 0) - 3.0).abs() < 1e-12);
        assert!(block.at(0, 1).abs() < 1e-12);
    }

    #[test]
    fn identity_svd_init_crops_rows() {
        let (block, _) = init_svd_block(&Array2::eye(4), 2, 4).unwrap();
        for j in 0..4 {
            assert!((block.at(0, j) - if j == 0 { 1.0 } else { 0.0 }).abs() < 1e-12);
            assert!((block.at(1, j) - if j == 1 { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_shortfall_zero_fills_and_warns() {
        let u = [1.0, 2.0];
        let v = [1.0, -1.0, 0.5];
        let w = Array2::from_fn(2, 3, |i, j| u[i] * v[j]); // rank 1
        let (block, warn) = init_svd_block(&w, 2, 2).unwrap();
        assert!(warn.is_some());
        // Best rank-1 approximation of the crop: still reconstructs the
        // top direction, so the block is nonzero but rank deficient.
        let s = svd(&block).unwrap();
        assert!(s.s[0] > 0.0);
        assert!(s.s[1].abs() < 1e-10);
    }

    #[test]
    fn zero_weight_svd_init_is_zero_block() {
        let (block, warn) = init_svd_block(&Array2::zeros(3, 3), 2, 2).unwrap();
        assert_eq!(block.max_abs(), 0.0);
        assert!(warn.is_some());
    }

    #[test]
    fn target_larger_than_weight_is_zero_padded() {
        let w = Array2::eye(2);
        let (block, _) = init_svd_block(&w, 3, 4).unwrap();
        assert_eq!(block.shape(), (3, 4));
        assert!((block.at(0, 0) - 1.0).abs() < 1e-12);
        assert!((block.at(1, 1) - 1.0).abs() < 1e-12);
        for j in 0..4 {
            assert_eq!(block.at(2, j), 0.0);
        }
        assert_eq!(block.at(0, 2), 0.0);
    }

    #[test]
    fn expansion_always_zeroes_w12_and_respects_seed() {
        let mut rng = init_rng(5);
        let w = Array2::randn(4, 4, &mut rng);
        let (p1, _) = expand_linear(&w, 2, 2, InitKind::Random, InitKind::Random, &mut init_rng(9))
            .unwrap();
        let (p2, _) = expand_linear(&w, 2, 2, InitKind::Random, InitKind::Random, &mut init_rng(9))
            .unwrap();
        assert_eq!(p1.w12.max_abs(), 0.0);
        assert!(p1.preserving());
        assert!(p1.w.bit_eq(&w));
        assert!(p1.w21.bit_eq(&p2.w21));
        let (p3, _) = expand_linear(&w, 2, 2, InitKind::Random, InitKind::Random, &mut init_rng(10))
            .unwrap();
        assert!(!p1.w21.bit_eq(&p3.w21));
        assert!(p3.w.bit_eq(&w)); // draws change, the frozen base does not
    }

    #[test]
    fn zero_init_blocks_are_zero() {
        let w = Array2::eye(3);
        let (p, warn) = expand_linear(&w, 2, 1, InitKind::Zero, InitKind::Zero, &mut init_rng(0))
            .unwrap();
        assert!(warn.is_none());
        assert_eq!(p.w21.max_abs(), 0.0);
        assert_eq!(p.w22.max_abs(), 0.0);
    }
}
