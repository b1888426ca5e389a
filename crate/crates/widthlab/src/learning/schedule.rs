//! Linear warmup-decay learning-rate schedule.

/// Learning rate for a 0-based `step` out of `total_steps`: a linear ramp
/// from 0 to `peak` over the warmup steps, then a linear decay back to 0
/// at the final step. `warmup_ratio` is the warmed-up fraction of the run.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_ratio: f64, peak: f64) -> f64 {
    if total_steps <= 1 || step >= total_steps {
        return 0.0;
    }
    let last = total_steps - 1;
    let warmup = ((total_steps as f64 * warmup_ratio).round() as usize).clamp(1, last);
    if step <= warmup {
        peak * step as f64 / warmup as f64
    } else {
        peak * (last - step) as f64 / (last - warmup) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_at_zero_peaks_after_warmup_ends_at_zero() {
        let (total, ratio, peak) = (200, 0.06, 1e-3);
        assert_eq!(lr_schedule(0, total, ratio, peak), 0.0);
        assert_eq!(lr_schedule(12, total, ratio, peak), peak);
        assert_eq!(lr_schedule(199, total, ratio, peak), 0.0);
    }

    #[test]
    fn ramps_up_then_decays_monotonically() {
        let (total, ratio, peak) = (100, 0.06, 2.5e-4);
        let lrs: Vec<f64> = (0..total).map(|s| lr_schedule(s, total, ratio, peak)).collect();
        let warmup = 6;
        for s in 1..=warmup {
            assert!(lrs[s] > lrs[s - 1]);
        }
        for s in warmup + 1..total {
            assert!(lrs[s] < lrs[s - 1]);
        }
        assert!(lrs.iter().all(|&lr| (0.0..=peak).contains(&lr)));
    }

    #[test]
    fn degenerate_schedules_return_zero() {
        assert_eq!(lr_schedule(0, 1, 0.06, 1e-3), 0.0);
        assert_eq!(lr_schedule(5, 5, 0.06, 1e-3), 0.0);
    }
}
