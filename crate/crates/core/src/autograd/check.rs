//! Central finite-difference verification of tape gradients.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};

/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding compare absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub mismatches: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.mismatches.is_empty()
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic parameter gradients of `loss` with central differences.
///
/// At most `per_param` entries of each listed parameter are probed, spread
/// evenly over the matrix; `None` probes every entry.
pub fn check_param_gradients<F>(
    store: &ParamStore,
    params: &[ParamId],
    per_param: Option<usize>,
    eps: f64,
    tol: f64,
    loss: F,
) -> GradCheckReport
where
    F: Fn(&ParamStore) -> (Tape, Var),
{
    let (tape, out) = loss(store);
    let analytic = tape.backward(out).params();
    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    for &id in params {
        let (rows, cols) = store.get(id).dim();
        let total = rows * cols;
        let count = per_param.map_or(total, |p| p.min(total));
        for s in 0..count {
            let flat = if count == total { s } else { s * total / count };
            let idx = (flat / cols, flat % cols);
            let orig = store.get(id)[idx];
            probe.get_mut(id)[idx] = orig + eps;
            let (t_plus, v_plus) = loss(&probe);
            probe.get_mut(id)[idx] = orig - eps;
            let (t_minus, v_minus) = loss(&probe);
            probe.get_mut(id)[idx] = orig;
            let numeric = (t_plus.scalar_value(v_plus) - t_minus.scalar_value(v_minus)) / (2.0 * eps);
            let a = analytic.get(&id).map_or(0.0, |g| g[idx]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(err);
            if err > tol {
                report.mismatches.push(GradMismatch {
                    param: store.name(id).to_string(),
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_error: err,
                });
            }
        }
    }
    report
}
