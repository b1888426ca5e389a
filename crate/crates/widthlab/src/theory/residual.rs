//! Residual networks and their block-upscaled form.

use super::{Result, TheoryError};
use crate::numerics::{Array2, NumericsError};

/// Plain residual network: `X_l = (W_l + I) X_{l-1}` with square weights.
#[derive(Debug, Clone)]
pub struct ResidualNet {
    weights: Vec<Array2>,
    width: usize,
}

impl ResidualNet {
    pub fn new(weights: Vec<Array2>) -> Result<Self> {
        let width = weights.first().map(|w| w.rows()).unwrap_or(0);
        for w in &weights {
            if w.shape() != (width, width) {
                return Err(TheoryError::Numerics(NumericsError::ShapeMismatch {
                    op: "residual net weights",
                    a: (width, width),
                    b: w.shape(),
                }));
            }
        }
        Ok(ResidualNet { weights, width })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[Array2] {
        &self.weights
    }

    /// All intermediate states `X_1 .. X_L`.
    pub fn forward_trace(&self, x0: &Array2) -> Result<Vec<Array2>> {
        let mut x = x0.clone();
        let mut trace = Vec::with_capacity(self.weights.len());
        for w in &self.weights {
            x = w.matmul(&x)?.add(&x)?;
            trace.push(x.clone());
        }
        Ok(trace)
    }
}

/// Final state `X_L` of the exact product form `prod(W_l + I) X0`.
pub fn residual_forward(net: &ResidualNet, x0: &Array2) -> Result<Array2> {
    Ok(net.forward_trace(x0)?.pop().unwrap_or_else(|| x0.clone()))
}

/// One upscaled layer: the block partition of a `(d+d_up)`-square weight.
#[derive(Debug, Clone)]
pub struct UpBlocks {
    pub w: Array2,
    pub w12: Array2,
    pub w21: Array2,
    pub w22: Array2,
}

impl UpBlocks {
    /// Assembles the full `(d+d_up)`-square matrix `[[W, W12], [W21, W22]]`.
    pub fn assemble(&self) -> Array2 {
        let (d, d_up) = (self.w.rows(), self.w22.rows());
        Array2::from_fn(d + d_up, d + d_up, |i, j| match (i < d, j < d) {
            (true, true) => self.w.at(i, j),
            (true, false) => self.w12.at(i, j - d),
            (false, true) => self.w21.at(i - d, j),
            (false, false) => self.w22.at(i - d, j - d),
        })
    }
}

/// Residual network whose every layer carries the 2x2 block partition.
/// The identity skip expands blockwise, so the original stream's update is
/// `X + (W X + W12 Xup)` and the upscaled stream's is `Xup + (W21 X + W22 Xup)`.
#[derive(Debug, Clone)]
pub struct UpscaledResidualNet {
    pub layers: Vec<UpBlocks>,
    width: usize,
    width_up: usize,
}

impl UpscaledResidualNet {
    pub fn new(layers: Vec<UpBlocks>) -> Result<Self> {
        let (width, width_up) = layers
            .first()
            .map(|b| (b.w.rows(), b.w22.rows()))
            .unwrap_or((0, 0));
        for b in &layers {
            let ok = b.w.shape() == (width, width)
                && b.w12.shape() == (width, width_up)
                && b.w21.shape() == (width_up, width)
                && b.w22.shape() == (width_up, width_up);
            if !ok {
                return Err(TheoryError::InvalidConfig(format!(
                    "inconsistent block shapes: W {:?}, W12 {:?}, W21 {:?}, W22 {:?}",
                    b.w.shape(),
                    b.w12.shape(),
                    b.w21.shape(),
                    b.w22.shape()
                )));
            }
        }
        Ok(UpscaledResidualNet {
            layers,
            width,
            width_up,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn width_up(&self) -> usize {
        self.width_up
    }

    /// The base network formed by the original `W` blocks alone.
    pub fn base(&self) -> ResidualNet {
        ResidualNet::new(self.layers.iter().map(|b| b.w.clone()).collect())
            .expect("blocks validated square at construction")
    }

    /// Per-layer (original, upscaled) states. The original stream applies
    /// `W X` first and adds the `W12 Xup` coupling second, so with `W12 = 0`
    /// the arithmetic on the original stream matches the base network's
    /// operation order exactly.
    pub fn forward_trace(&self, x0: &Array2, x0up: &Array2) -> Result<Vec<(Array2, Array2)>> {
        if x0.cols() != x0up.cols() || x0.rows() != self.width || x0up.rows() != self.width_up {
            return Err(TheoryError::Numerics(NumericsError::ShapeMismatch {
                op: "upscaled residual forward",
                a: x0.shape(),
                b: x0up.shape(),
            }));
        }
        let (mut x, mut xup) = (x0.clone(), x0up.clone());
        let mut trace = Vec::with_capacity(self.layers.len());
        for b in &self.layers {
            let new_x = b.w.matmul(&x)?.add(&b.w12.matmul(&xup)?)?.add(&x)?;
            let new_xup = b.w21.matmul(&x)?.add(&b.w22.matmul(&xup)?)?.add(&xup)?;
            x = new_x;
            xup = new_xup;
            trace.push((x.clone(), xup.clone()));
        }
        Ok(trace)
    }

    pub fn forward(&self, x0: &Array2, x0up: &Array2) -> Result<(Array2, Array2)> {
        Ok(self
            .forward_trace(x0, x0up)?
            .pop()
            .unwrap_or_else(|| (x0.clone(), x0up.clone())))
    }
}

/// Per-layer max deviation of the upscaled net's original stream from the
/// base network. Requires every `W12` to be exactly zero; under that
/// precondition the deviations are exactly zero at every layer.
pub fn check_preservation(
    net: &UpscaledResidualNet,
    x0: &Array2,
    x0up: &Array2,
) -> Result<Vec<f64>> {
    for (l, b) in net.layers.iter().enumerate() {
        if b.w12.max_abs() != 0.0 {
            return Err(TheoryError::Contract(format!(
                "layer {l} has a nonzero W12 block; preservation is only claimed for W12 = 0"
            )));
        }
    }
    probe_preservation(net, x0, x0up)
}

/// Unchecked variant of [`check_preservation`] for perturbation probes:
/// reports the deviations whatever the `W12` blocks hold.
pub fn probe_preservation(
    net: &UpscaledResidualNet,
    x0: &Array2,
    x0up: &Array2,
) -> Result<Vec<f64>> {
    let base_trace = net.base().forward_trace(x0)?;
    let up_trace = net.forward_trace(x0, x0up)?;
    Ok(base_trace
        .iter()
        .zip(&up_trace)
        .map(|(b, (orig, _))| orig.max_abs_diff(b).expect("shapes match by construction"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::init_rng;

    fn random_net(d: usize, d_up: usize, l: usize, seed: u64) -> UpscaledResidualNet {
        let mut rng = init_rng(seed);
        let layers = (0..l)
            .map(|_| UpBlocks {
                w: Array2::randn(d, d, &mut rng).scale(0.3),
                w12: Array2::zeros(d, d_up),
                w21: Array2::randn(d_up, d, &mut rng).scale(0.3),
                w22: Array2::randn(d_up, d_up, &mut rng).scale(0.3),
            })
            .collect();
        UpscaledResidualNet::new(layers).unwrap()
    }

    #[test]
    fn zero_weights_act_as_identity() {
        let net = ResidualNet::new(vec![Array2::zeros(3, 3); 4]).unwrap();
        let x0 = Array2::from_vec(3, 1, vec![1.0, -2.0, 0.5]).unwrap();
        let out = residual_forward(&net, &x0).unwrap();
        assert!(out.bit_eq(&x0));
    }

    #[test]
    fn identity_weight_doubles_the_input() {
        let net = ResidualNet::new(vec![Array2::eye(2)]).unwrap();
        let x0 = Array2::from_vec(2, 1, vec![3.0, -1.5]).unwrap();
        let out = residual_forward(&net, &x0).unwrap();
        assert_eq!((out.at(0, 0), out.at(1, 0)), (6.0, -3.0));
    }

    #[test]
    fn forward_matches_materialized_matrix_product() {
        let mut rng = init_rng(4);
        let weights: Vec<Array2> = (0..3).map(|_| Array2::randn(4, 4, &mut rng)).collect();
        let net = ResidualNet::new(weights.clone()).unwrap();
        let x0 = Array2::randn(4, 2, &mut rng);

        // Oracle: materialize prod_(l=L..1) (W_l + I), then apply once.
        let mut product = Array2::eye(4);
        for w in &weights {
            let wi = w.add(&Array2::eye(4)).unwrap();
            product = wi.matmul(&product).unwrap();
        }
        let want = product.matmul(&x0).unwrap();
        let got = residual_forward(&net, &x0).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn upscaled_forward_matches_assembled_matrix_form() {
        let net = random_net(3, 2, 4, 9);
        let mut rng = init_rng(10);
        let x0 = Array2::randn(3, 1, &mut rng);
        let x0up = Array2::randn(2, 1, &mut rng);

        let stacked = Array2::from_fn(5, 1, |i, _| {
            if i < 3 {
                x0.at(i, 0)
            } else {
                x0up.at(i - 3, 0)
            }
        });
        let mut want = stacked;
        for b in &net.layers {
            let full = b.assemble().add(&Array2::eye(5)).unwrap();
            want = full.matmul(&want).unwrap();
        }
        let (x, xup) = net.forward(&x0, &x0up).unwrap();
        for i in 0..3 {
            assert!((x.at(i, 0) - want.at(i, 0)).abs() < 1e-12);
        }
        for i in 0..2 {
            assert!((xup.at(i, 0) - want.at(i + 3, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn preservation_is_bitwise_even_for_huge_upscaled_inputs() {
        let net = random_net(4, 3, 5, 11);
        let mut rng = init_rng(12);
        let x0 = Array2::randn(4, 1, &mut rng);
        let x0up = Array2::randn(3, 1, &mut rng).scale(1e6);
        let devs = check_preservation(&net, &x0, &x0up).unwrap();
        assert_eq!(devs, vec![0.0; 5]);
    }

    #[test]
    fn nonzero_w12_is_a_contract_error_and_probe_sees_the_shift() {
        let mut net = random_net(3, 2, 3, 13);
        net.layers[1].w12.set(0, 0, 1e-3);
        let mut rng = init_rng(14);
        let x0 = Array2::randn(3, 1, &mut rng);
        let x0up = Array2::randn(2, 1, &mut rng);

        let err = check_preservation(&net, &x0, &x0up).unwrap_err();
        assert!(matches!(err, TheoryError::Contract(_)));

        let devs = probe_preservation(&net, &x0, &x0up).unwrap();
        assert_eq!(devs[0], 0.0);
        assert!(devs[1] > 0.0 && devs[2] > 0.0);
    }
}
