//! Central-difference gradient checking.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub step: f64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Rounding allowance, in units of `f64::EPSILON · max(|f(θ±h)|)`, for
    /// each evaluation of `f`. The resulting absolute bound on the
    /// cancellation error of the difference quotient is subtracted from
    /// `|analytic − numeric|` before scaling; zero disables it.
    pub roundoff_ulps: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: 1e-6, floor: 1e-6, roundoff_ulps: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error after the rounding allowance.
    pub max_rel_error: f64,
    /// Worst relative error with no rounding allowance.
    pub max_raw_rel_error: f64,
    pub worst_coord: Option<usize>,
    pub checked: usize,
}

/// Compares `grad` with central differences of `f` around `params` on the
/// given coordinates (all when `coords` is `None`).
pub fn finite_diff_check(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    grad: &[f64],
    coords: Option<&[usize]>,
    opts: GradCheck,
) -> GradCheckReport {
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_raw_rel_error: 0.0,
        worst_coord: None,
        checked: 0,
    };
    for &c in coords {
        let orig = theta[c];
        theta[c] = orig + opts.step;
        let up = f(&theta);
        theta[c] = orig - opts.step;
        let down = f(&theta);
        theta[c] = orig;
        let numeric = (up - down) / (2.0 * opts.step);
        let scale = grad[c].abs().max(numeric.abs()).max(opts.floor);
        let noise = opts.roundoff_ulps * f64::EPSILON * up.abs().max(down.abs()) / opts.step;
        let gap = (grad[c] - numeric).abs();
        let rel = (gap - noise).max(0.0) / scale;
        report.max_raw_rel_error = report.max_raw_rel_error.max(gap / scale);
        report.checked += 1;
        if report.worst_coord.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_coord = Some(c);
        }
    }
    report
}
