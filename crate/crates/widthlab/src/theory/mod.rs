//! Executable verification on the residual-only abstraction.
//!
//! Everything here works on plain residual networks `X_l = (W_l + I) X_{l-1}`
//! rather than transformers: preservation under block upscaling is checked
//! bitwise, the output-shift bound is evaluated against Monte-Carlo
//! perturbations, and the routed continual-learning recursion is simulated
//! on a convex proxy model.

mod clsim;
mod residual;
mod shift;

pub use clsim::{cl_simulate, CLSimConfig, CLSimReport, SimModel};
pub use residual::{
    check_preservation, probe_preservation, residual_forward, ResidualNet, UpBlocks,
    UpscaledResidualNet,
};
pub use shift::{
    measure_shift, run_bound_scan, run_lfp_sweep, run_preservation_scan, sample_instance,
    shift_bound, BoundScan, InstanceParams, PreservationScan, ShiftMeasurement, SweepParams,
    SweepResult, TheoryInstance,
};

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum TheoryError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, TheoryError>;

/// Least-squares line fit returning (slope, intercept, r-squared).
/// A constant response fits perfectly (r-squared 1).
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "line fit needs at least two points");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::fit_line;

    #[test]
    fn fit_recovers_an_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (slope, intercept, r2) = fit_line(&xs, &ys);
        assert!((slope - 2.0).abs() < 1e-12);
        assert!((intercept - 1.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_data_reports_partial_fit() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [0.0, 2.0, 1.0, 3.0];
        let (_, _, r2) = fit_line(&xs, &ys);
        assert!(r2 > 0.0 && r2 < 1.0);
    }
}
