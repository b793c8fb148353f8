//! Finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Coordinates where a perturbed evaluation was not finite.
    pub failed: Vec<usize>,
    pub analytic: Tensor,
    pub numeric: Tensor,
    pub passed: bool,
}

/// Compares the tape gradient of `f` at `point` with central finite
/// differences. `f` receives a fresh tape and the point as a parameter and
/// must return a scalar variable.
pub fn grad_check<F>(f: F, point: &Tensor, tolerance: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let loss = f(&mut tape, x);
    let analytic = match tape.backward(loss) {
        Ok(grads) => grads.get_or_zeros(x, point),
        Err(_) => Tensor::full(point.shape(), f64::NAN),
    };

    let eval = |p: Tensor| -> f64 {
        let mut tape = Tape::new();
        let x = tape.param(p);
        let out = f(&mut tape, x);
        tape.value(out).item()
    };

    let mut numeric = Tensor::zeros(point.shape());
    let mut failed = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    let mut worst_index = None;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = point.clone();
        minus.data_mut()[i] -= FD_STEP;
        let (fp, fm) = (eval(plus), eval(minus));
        if !fp.is_finite() || !fm.is_finite() {
            failed.push(i);
            numeric.data_mut()[i] = f64::NAN;
            continue;
        }
        let num = (fp - fm) / (2.0 * FD_STEP);
        numeric.data_mut()[i] = num;
        let ana = analytic.data()[i];
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(SCALE_FLOOR);
        if rel.is_nan() || rel > max_rel_error {
            max_rel_error = rel;
            worst_index = Some(i);
        }
    }
    let passed = failed.is_empty() && max_rel_error < tolerance;
    GradCheckReport { max_rel_error, worst_index, failed, analytic, numeric, passed }
}
