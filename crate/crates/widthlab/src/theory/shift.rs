//! Output-shift measurement for partially frozen residual stacks.
//!
//! An upscaled residual net with spectral gain `delta_fp` on its first
//! `l_fp` layers and `delta_np` on the rest receives an additive update of
//! spectral norm `epsilon` on every non-frozen layer. The final-state shift
//! obeys
//!
//! ```text
//! shift <= (L - L_fp) * eps * (1 + d_np)^(L-1)
//!          * ((1 + d_fp) / (1 + d_np))^L_fp * ||x0||
//! ```
//!
//! up to second order in `eps`. The first-order part of the shift satisfies
//! the inequality exactly; everything beyond first order is covered by a
//! separate cap that shrinks like `eps^2`.

use super::residual::{check_preservation, UpBlocks, UpscaledResidualNet};
use super::{fit_line, Result, TheoryError};
use crate::numerics::{init_rng, svd, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dimensions and rates describing one sampled instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceParams {
    pub l: usize,
    pub l_fp: usize,
    pub width: usize,
    pub width_up: usize,
    pub delta_fp: f64,
    pub delta_np: f64,
    pub epsilon: f64,
}

impl InstanceParams {
    fn validate(&self) -> Result<()> {
        if self.l == 0 || self.width == 0 || self.width_up == 0 {
            return Err(TheoryError::InvalidConfig(format!(
                "need positive depth and widths, got l {}, width {}, width_up {}",
                self.l, self.width, self.width_up
            )));
        }
        if self.l_fp > self.l {
            return Err(TheoryError::InvalidConfig(format!(
                "l_fp {} exceeds depth {}",
                self.l_fp, self.l
            )));
        }
        if !(self.delta_fp >= 0.0 && self.delta_np >= self.delta_fp) {
            return Err(TheoryError::InvalidConfig(format!(
                "need 0 <= delta_fp <= delta_np, got {} and {}",
                self.delta_fp, self.delta_np
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(TheoryError::InvalidConfig(format!(
                "need epsilon >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One sampled net plus the update it will receive. Frozen layers carry an
/// all-zero update block; every other layer's update has spectral norm
/// exactly `epsilon`.
#[derive(Debug, Clone)]
pub struct TheoryInstance {
    pub params: InstanceParams,
    pub net: UpscaledResidualNet,
    pub deltas: Vec<Array2>,
    pub x0: Array2,
    pub x0up: Array2,
}

/// Gaussian blocks with the preservation structure (`W12 = 0`).
fn raw_blocks(d: usize, d_up: usize, rng: &mut impl Rng) -> UpBlocks {
    UpBlocks {
        w: Array2::randn(d, d, rng),
        w12: Array2::zeros(d, d_up),
        w21: Array2::randn(d_up, d, rng),
        w22: Array2::randn(d_up, d_up, rng),
    }
}

fn scale_blocks(b: &UpBlocks, factor: f64) -> UpBlocks {
    UpBlocks {
        w: b.w.scale(factor),
        w12: b.w12.scale(factor),
        w21: b.w21.scale(factor),
        w22: b.w22.scale(factor),
    }
}

fn vstack(top: &Array2, bottom: &Array2) -> Array2 {
    let d = top.rows();
    Array2::from_fn(d + bottom.rows(), top.cols(), |i, j| {
        if i < d {
            top.at(i, j)
        } else {
            bottom.at(i - d, j)
        }
    })
}

/// Rescales `m` so its largest singular value is exactly `target`.
fn rescale_to(m: &Array2, sigma: f64, target: f64) -> Array2 {
    if sigma == 0.0 {
        m.clone()
    } else {
        m.scale(target / sigma)
    }
}

/// Draws an instance whose layer gains and update norms match `params`
/// exactly. Layers below `l_fp` get gain `delta_fp` and a zero update;
/// layers from `l_fp` on get gain `delta_np` and an update of norm `epsilon`.
pub fn sample_instance(params: &InstanceParams, rng: &mut impl Rng) -> Result<TheoryInstance> {
    params.validate()?;
    let dim = params.width + params.width_up;
    let mut layers = Vec::with_capacity(params.l);
    let mut deltas = Vec::with_capacity(params.l);
    for i in 0..params.l {
        let raw = raw_blocks(params.width, params.width_up, rng);
        let sigma = svd(&raw.assemble())?.s[0];
        let target = if i < params.l_fp {
            params.delta_fp
        } else {
            params.delta_np
        };
        layers.push(scale_blocks(&raw, if sigma == 0.0 { 0.0 } else { target / sigma }));

        if i < params.l_fp {
            deltas.push(Array2::zeros(dim, dim));
        } else {
            let d_raw = Array2::randn(dim, dim, rng);
            let d_sigma = svd(&d_raw)?.s[0];
            deltas.push(rescale_to(&d_raw, d_sigma, params.epsilon));
        }
    }
    Ok(TheoryInstance {
        params: params.clone(),
        net: UpscaledResidualNet::new(layers)?,
        deltas,
        x0: Array2::randn(params.width, 1, rng),
        x0up: Array2::randn(params.width_up, 1, rng),
    })
}

/// Closed-form shift bound for the stacked final state.
pub fn shift_bound(
    l: usize,
    l_fp: usize,
    delta_fp: f64,
    delta_np: f64,
    epsilon: f64,
    input_norm: f64,
) -> f64 {
    if l_fp >= l {
        return 0.0;
    }
    (l - l_fp) as f64
        * epsilon
        * (1.0 + delta_np).powi(l as i32 - 1)
        * ((1.0 + delta_fp) / (1.0 + delta_np)).powi(l_fp as i32)
        * input_norm
}

/// Everything the bound leaves out is second order in `epsilon`: expanding
/// the perturbed product layer by layer and subtracting the zeroth- and
/// first-order terms leaves this cap.
fn second_order_cap(
    l: usize,
    l_fp: usize,
    delta_fp: f64,
    delta_np: f64,
    epsilon: f64,
    input_norm: f64,
) -> f64 {
    let l_np = l - l_fp;
    if l_np == 0 {
        return 0.0;
    }
    let tail = (1.0 + delta_np + epsilon).powi(l_np as i32)
        - (1.0 + delta_np).powi(l_np as i32)
        - l_np as f64 * epsilon * (1.0 + delta_np).powi(l_np as i32 - 1);
    (1.0 + delta_fp).powi(l_fp as i32) * tail.max(0.0) * input_norm
}

/// Measured and predicted shift for one instance.
#[derive(Debug, Clone, Serialize)]
pub struct ShiftMeasurement {
    pub params: InstanceParams,
    /// `||f_updated(x0) - f(x0)||` over the stacked final state.
    pub raw: f64,
    /// Norm of the sum of single-layer substitution terms.
    pub first_order: f64,
    pub bound: f64,
    pub second_order_cap: f64,
}

/// Runs the updated and original nets on the instance's input and compares
/// the final stacked states against the closed-form bound.
pub fn measure_shift(inst: &TheoryInstance) -> Result<ShiftMeasurement> {
    let full: Vec<Array2> = inst.net.layers.iter().map(|b| b.assemble()).collect();
    let x0_full = vstack(&inst.x0, &inst.x0up);
    let input_norm = x0_full.frob_norm();
    let p = &inst.params;

    // One pass tracks the unperturbed state and accumulates the first-order
    // sum: acc picks up `delta_i x_{i-1}` at layer i and is propagated through
    // every later layer by `(W + I)`.
    let mut acc = Array2::zeros(x0_full.rows(), 1);
    let mut state = x0_full.clone();
    for (w, delta) in full.iter().zip(&inst.deltas) {
        acc = w.matmul(&acc)?.add(&acc)?.add(&delta.matmul(&state)?)?;
        state = w.matmul(&state)?.add(&state)?;
    }

    let mut pert_state = x0_full.clone();
    for (w, delta) in full.iter().zip(&inst.deltas) {
        let wp = w.add(delta)?;
        pert_state = wp.matmul(&pert_state)?.add(&pert_state)?;
    }

    Ok(ShiftMeasurement {
        params: p.clone(),
        raw: pert_state.sub(&state)?.frob_norm(),
        first_order: acc.frob_norm(),
        bound: shift_bound(p.l, p.l_fp, p.delta_fp, p.delta_np, p.epsilon, input_norm),
        second_order_cap: second_order_cap(
            p.l, p.l_fp, p.delta_fp, p.delta_np, p.epsilon, input_norm,
        ),
    })
}

/// Outcome of [`run_preservation_scan`].
#[derive(Debug, Clone, Serialize)]
pub struct PreservationScan {
    pub instances: usize,
    /// Instances whose original stream deviated from the base net at all.
    pub violations: usize,
    pub max_deviation: f64,
}

/// Builds random upscaled residual nets with `W12 = 0` and checks that the
/// original stream matches the base net bit for bit at every layer. Every
/// fourth instance feeds an upscaled input six orders of magnitude larger
/// than the original one.
pub fn run_preservation_scan(n: usize, seed: u64) -> Result<PreservationScan> {
    let mut rng = init_rng(seed);
    let mut violations = 0;
    let mut max_deviation = 0.0f64;
    for i in 0..n {
        let d = rng.gen_range(1..=8);
        let d_up = rng.gen_range(1..=4);
        let l = rng.gen_range(1..=6);
        let layers: Vec<UpBlocks> = (0..l)
            .map(|_| scale_blocks(&raw_blocks(d, d_up, &mut rng), 0.4))
            .collect();
        let net = UpscaledResidualNet::new(layers)?;
        let x0 = Array2::randn(d, 1, &mut rng);
        let mut x0up = Array2::randn(d_up, 1, &mut rng);
        if i % 4 == 0 {
            x0up = x0up.scale(1e6);
        }
        let devs = check_preservation(&net, &x0, &x0up)?;
        let worst = devs.into_iter().fold(0.0f64, f64::max);
        if worst != 0.0 {
            violations += 1;
        }
        max_deviation = max_deviation.max(worst);
    }
    Ok(PreservationScan {
        instances: n,
        violations,
        max_deviation,
    })
}

/// Outcome of [`run_bound_scan`].
#[derive(Debug, Clone, Serialize)]
pub struct BoundScan {
    pub instances: usize,
    /// Instances with `first_order > bound`. The inequality is exact, so any
    /// count above zero indicates a defect.
    pub first_order_violations: usize,
    /// Instances with `raw > bound`. Second-order terms can push the raw
    /// shift past the bound, so a small count is expected.
    pub raw_violations: usize,
    /// Instances with `raw > bound + second_order_cap`. Also exact.
    pub raw_beyond_cap: usize,
    pub max_first_order_ratio: f64,
    pub max_raw_ratio: f64,
    pub records: Vec<ShiftMeasurement>,
}

/// Samples instances across depths, widths, gains, and update norms, and
/// tallies how the measured shifts sit against the bound.
pub fn run_bound_scan(n: usize, seed: u64) -> Result<BoundScan> {
    let mut rng = init_rng(seed);
    let mut records = Vec::with_capacity(n);
    let mut first_order_violations = 0;
    let mut raw_violations = 0;
    let mut raw_beyond_cap = 0;
    let mut max_first_order_ratio = 0.0f64;
    let mut max_raw_ratio = 0.0f64;
    for _ in 0..n {
        let l = rng.gen_range(2..=6);
        let delta_np = rng.gen_range(0.1..0.6);
        let params = InstanceParams {
            l,
            l_fp: rng.gen_range(0..=l),
            width: rng.gen_range(2..=8),
            width_up: rng.gen_range(1..=4),
            delta_fp: delta_np * rng.gen_range(0.05..0.8),
            delta_np,
            epsilon: rng.gen_range(0.002..0.03),
        };
        let inst = sample_instance(&params, &mut rng)?;
        let m = measure_shift(&inst)?;
        if m.first_order > m.bound {
            first_order_violations += 1;
        }
        if m.raw > m.bound {
            raw_violations += 1;
        }
        if m.raw > m.bound + m.second_order_cap {
            raw_beyond_cap += 1;
        }
        if m.bound > 0.0 {
            max_first_order_ratio = max_first_order_ratio.max(m.first_order / m.bound);
            max_raw_ratio = max_raw_ratio.max(m.raw / m.bound);
        }
        records.push(m);
    }
    Ok(BoundScan {
        instances: n,
        first_order_violations,
        raw_violations,
        raw_beyond_cap,
        max_first_order_ratio,
        max_raw_ratio,
        records,
    })
}

/// Configuration for [`run_lfp_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub l: usize,
    pub width: usize,
    pub width_up: usize,
    pub delta_fp: f64,
    pub delta_np: f64,
    pub epsilon: f64,
    /// Independent nets per `l_fp` value; medians are taken over these.
    pub draws: usize,
    pub seed: u64,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            l: 6,
            width: 6,
            width_up: 3,
            delta_fp: 0.05,
            delta_np: 0.6,
            epsilon: 0.02,
            draws: 33,
            seed: 0,
        }
    }
}

/// Outcome of [`run_lfp_sweep`]. The fit is of `ln(median shift)` against
/// `l_fp` over `l_fp < L`; the fully frozen point has shift exactly zero and
/// is excluded from the fit but included in the monotonicity check.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub l_fp: Vec<usize>,
    pub median_shift: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub monotone: bool,
}

/// Sweeps `l_fp` from 0 to L over shared random draws: each draw fixes the
/// Gaussian directions of every layer and update, and each `l_fp` value only
/// changes which layers are rescaled to the frozen gain and which updates
/// are zeroed. Freezing a deeper prefix must shrink the measured shift.
pub fn run_lfp_sweep(params: &SweepParams) -> Result<SweepResult> {
    if params.l < 2 {
        return Err(TheoryError::InvalidConfig(format!(
            "sweep needs depth >= 2, got {}",
            params.l
        )));
    }
    if params.draws == 0 {
        return Err(TheoryError::InvalidConfig("sweep needs draws >= 1".into()));
    }
    InstanceParams {
        l: params.l,
        l_fp: 0,
        width: params.width,
        width_up: params.width_up,
        delta_fp: params.delta_fp,
        delta_np: params.delta_np,
        epsilon: params.epsilon,
    }
    .validate()?;
    if params.epsilon == 0.0 {
        return Err(TheoryError::InvalidConfig(
            "sweep needs epsilon > 0 to observe a shift".into(),
        ));
    }

    let dim = params.width + params.width_up;
    let mut rng = init_rng(params.seed);
    let mut shifts: Vec<Vec<f64>> = vec![Vec::with_capacity(params.draws); params.l + 1];
    for _ in 0..params.draws {
        let raw_layers: Vec<(Array2, f64)> = (0..params.l)
            .map(|_| {
                let full = raw_blocks(params.width, params.width_up, &mut rng).assemble();
                let sigma = svd(&full)?.s[0];
                Ok((full, sigma))
            })
            .collect::<Result<_>>()?;
        let raw_deltas: Vec<(Array2, f64)> = (0..params.l)
            .map(|_| {
                let d = Array2::randn(dim, dim, &mut rng);
                let sigma = svd(&d)?.s[0];
                Ok((d, sigma))
            })
            .collect::<Result<_>>()?;
        let x0_full = Array2::randn(dim, 1, &mut rng);

        for l_fp in 0..=params.l {
            let mut state = x0_full.clone();
            let mut pert_state = x0_full.clone();
            for (i, ((w_raw, w_sigma), (d_raw, d_sigma))) in
                raw_layers.iter().zip(&raw_deltas).enumerate()
            {
                let target = if i < l_fp {
                    params.delta_fp
                } else {
                    params.delta_np
                };
                let w = rescale_to(w_raw, *w_sigma, target);
                state = w.matmul(&state)?.add(&state)?;
                let wp = if i < l_fp {
                    w
                } else {
                    w.add(&rescale_to(d_raw, *d_sigma, params.epsilon))?
                };
                pert_state = wp.matmul(&pert_state)?.add(&pert_state)?;
            }
            shifts[l_fp].push(pert_state.sub(&state)?.frob_norm());
        }
    }

    let median_shift: Vec<f64> = shifts.iter_mut().map(|v| median(v)).collect();
    let monotone = median_shift.windows(2).all(|w| w[0] >= w[1]);
    let mut xs = Vec::with_capacity(params.l);
    let mut ys = Vec::with_capacity(params.l);
    for (l_fp, &m) in median_shift.iter().enumerate().take(params.l) {
        if m > 0.0 {
            xs.push(l_fp as f64);
            ys.push(m.ln());
        }
    }
    if xs.len() < 2 {
        return Err(TheoryError::InvalidConfig(
            "sweep produced too few positive medians to fit".into(),
        ));
    }
    let (slope, intercept, r2) = fit_line(&xs, &ys);
    Ok(SweepResult {
        l_fp: (0..=params.l).collect(),
        median_shift,
        slope,
        intercept,
        r2,
        monotone,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite shifts"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
