//! Token-level logit router between the preserving and adapting branches.

use super::{Result, TrainError};
use crate::numerics::{Array2, NumericsError};

/// Output logits of both branches for one sequence, plus the per-token
/// routing decision once it has been made (`true` routes to preserve).
#[derive(Debug, Clone)]
pub struct LogitBundle {
    pub z_preserve: Array2,
    pub zup_preserve: Array2,
    pub z_adapt: Array2,
    pub zup_adapt: Array2,
    pub route_choice: Vec<bool>,
}

impl LogitBundle {
    pub fn new(
        z_preserve: Array2,
        zup_preserve: Array2,
        z_adapt: Array2,
        zup_adapt: Array2,
    ) -> Result<Self> {
        let shape = z_preserve.shape();
        for other in [&zup_preserve, &z_adapt, &zup_adapt] {
            if other.shape() != shape {
                return Err(TrainError::Numerics(NumericsError::ShapeMismatch {
                    op: "logit bundle",
                    a: shape,
                    b: other.shape(),
                }));
            }
        }
        Ok(LogitBundle {
            z_preserve,
            zup_preserve,
            z_adapt,
            zup_adapt,
            route_choice: Vec::new(),
        })
    }
}

/// Row-wise cosine similarity. Bit-identical rows score exactly 1 (this
/// covers the all-W12-zero case, where both branches coincide), and a
/// zero-norm row on either side also scores 1 so degenerate tokens route
/// to the preserving branch.
pub fn cosine_rows(a: &Array2, b: &Array2) -> Vec<f64> {
    assert_eq!(a.shape(), b.shape(), "cosine over mismatched shapes");
    let (rows, cols) = a.shape();
    (0..rows)
        .map(|i| {
            let (ra, rb) = (a.row(i), b.row(i));
            if ra.iter().zip(rb).all(|(x, y)| x.to_bits() == y.to_bits()) {
                return 1.0;
            }
            let dot: f64 = (0..cols).map(|j| ra[j] * rb[j]).sum();
            let na: f64 = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                dot / (na * nb)
            }
        })
        .collect()
}

/// Per-token routing decision: `true` (preserve) when the branch logits
/// agree with cosine strictly above `tau`. At `tau = 1` nothing exceeds
/// the threshold, so every token takes the adapt branch.
pub fn route_choices(z_preserve: &Array2, z_adapt: &Array2, tau: f64) -> Vec<bool> {
    cosine_rows(z_preserve, z_adapt)
        .into_iter()
        .map(|c| c > tau)
        .collect()
}

/// Assembles the routed logits and records the decision in the bundle.
///
/// Tokens routed to preserve emit `(Z_preserve + Z_adapt)/2 + Zup_preserve`;
/// the rest emit `Z_adapt + Zup_adapt`. The threshold comparison is a hard
/// decision; during training, gradients flow through whichever expression
/// each token selected.
pub fn route_logits(bundle: &mut LogitBundle, tau: f64) -> Result<Array2> {
    let choices = route_choices(&bundle.z_preserve, &bundle.z_adapt, tau);
    let (rows, cols) = bundle.z_preserve.shape();
    let mut out = Array2::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = if choices[i] {
                0.5 * (bundle.z_preserve.at(i, j) + bundle.z_adapt.at(i, j))
                    + bundle.zup_preserve.at(i, j)
            } else {
                bundle.z_adapt.at(i, j) + bundle.zup_adapt.at(i, j)
            };
            out.set(i, j, v);
        }
    }
    bundle.route_choice = choices;
    Ok(out)
}
