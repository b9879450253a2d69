//! Central finite-difference verification of analytic gradients.
//!
//! Parameters are `f32`, so each coordinate is perturbed in `f32` and the
//! difference quotient divides by the step actually taken. Piecewise-linear
//! activations make the loss non-differentiable on a measure-zero set. For a
//! smooth loss the gap between forward and backward one-sided slopes is
//! proportional to the step; a coordinate whose central quotient changes
//! when the step is halved, or whose one-sided gap does not halve with it,
//! sits on or near such a kink and is reported as skipped rather than
//! compared.

/// Floor on the denominator of the relative error, so gradients that are
/// zero up to rounding do not produce spurious failures.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        GradCheckReport {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            checked: self.checked + other.checked,
            skipped_kinks: self.skipped_kinks + other.skipped_kinks,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

struct Quotients {
    central: f64,
    forward: f64,
    backward: f64,
}

fn quotients(params: &mut [f32], i: usize, h: f64, loss: &mut impl FnMut(&[f32]) -> f64) -> Quotients {
    let orig = params[i];
    let plus = (f64::from(orig) + h) as f32;
    let minus = (f64::from(orig) - h) as f32;
    let l0 = loss(params);
    params[i] = plus;
    let lp = loss(params);
    params[i] = minus;
    let lm = loss(params);
    params[i] = orig;
    let x = f64::from(orig);
    Quotients {
        central: (lp - lm) / (f64::from(plus) - f64::from(minus)),
        forward: (lp - l0) / (f64::from(plus) - x),
        backward: (l0 - lm) / (x - f64::from(minus)),
    }
}

/// Compares `analytic[i]` against central differences of `loss` for every
/// coordinate in `coords`.
pub fn check_coordinates(
    params: &mut [f32],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    h: f64,
    mut loss: impl FnMut(&[f32]) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for i in coords {
        let full = quotients(params, i, h, &mut loss);
        let half = quotients(params, i, h / 2.0, &mut loss);
        let gap = full.forward - full.backward;
        let half_gap = half.forward - half.backward;
        let scale = full.central.abs().max(REL_ERR_FLOOR);
        if relative_error(full.central, half.central) > 1e-5 || (half_gap - gap / 2.0).abs() > 1e-5 * scale {
            report.skipped_kinks += 1;
            continue;
        }
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(relative_error(analytic[i], full.central));
    }
    report
}
