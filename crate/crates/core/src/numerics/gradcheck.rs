//! Central-difference verification of tape gradients, using the five-point
//! stencil so the step can stay large enough to keep round-off small.

use serde::Serialize;

use super::params::ParamVector;
use super::tape::{backward, Tape, Var};
use crate::error::Result;

/// Floor applied to the denominator of the relative error.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Fault injection: perturbs the analytic gradient at this index before comparing.
    pub corrupt_index: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            corrupt_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub value: f64,
    pub max_rel_error: f64,
    /// Parameter index with the largest relative error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// A norm or cosine hit its zero guard at the base point, where the
    /// function is not differentiable.
    pub non_differentiable: bool,
    pub passed: bool,
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ABS_FLOOR)
}

/// Compares the reverse-mode gradient of the scalar built by `f` against
/// central differences on every parameter. Failures are reported, not raised;
/// only a non-finite evaluation at the base point is an error.
pub fn grad_check<F>(params: &ParamVector, options: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>) -> Var,
{
    let mut tape = Tape::new(params);
    let out = f(&mut tape);
    tape.check_finite()?;
    let value = tape.scalar(out);
    let non_differentiable = tape.guard_hits() > 0;
    let mut analytic = backward(&tape, out)?.params;
    drop(tape);
    if let Some(i) = options.corrupt_index {
        analytic[i] += 1.0 + analytic[i].abs();
    }

    let eval = |p: &ParamVector| -> f64 {
        let mut t = Tape::detached(p);
        let o = f(&mut t);
        t.scalar(o)
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        value,
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
        checked: params.len(),
        non_differentiable,
        passed: true,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let base = params.values()[i];
        let mut at = |offset: f64| {
            probe.values_mut()[i] = base + offset * options.step;
            eval(&probe)
        };
        let (p1, m1, p2, m2) = (at(1.0), at(-1.0), at(2.0), at(-2.0));
        probe.values_mut()[i] = base;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * options.step);
        let err = relative_error(a, numeric);
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < options.tolerance;
    Ok(report)
}
