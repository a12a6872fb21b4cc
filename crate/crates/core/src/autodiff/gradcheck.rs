//! Central finite-difference checks against tape gradients.

use super::tape::{OpKind, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms, since central
/// differences at `FD_STEP` cannot resolve relative error below it.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub finite: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub elements: Vec<ElementCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &ElementCheck> {
        self.elements.iter().filter(|e| !e.passed)
    }
}

/// Options beyond the point and tolerance.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradcheckOptions {
    /// Sign-flip fault applied to the tape used for the analytic gradient.
    pub fault: Option<OpKind>,
}

/// Compares the tape gradient of scalar `f` at `point` with central
/// differences. `f` receives the tape and the input leaf.
pub fn gradcheck<F>(f: F, point: &Tensor, tolerance: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    gradcheck_with(f, point, tolerance, GradcheckOptions::default())
}

pub fn gradcheck_with<F>(f: F, point: &Tensor, tolerance: f64, opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.inject_fault(opts.fault);
    let x = tape.input(point.clone());
    let y = f(&mut tape, x)?;
    if !tape.value(y).is_scalar() {
        return Err(Error::NotScalar(tape.value(y).shape().to_vec()));
    }
    let grads = tape.backward(y)?;
    let analytic: Vec<f64> = match grads.wrt(x) {
        Some(g) => g.to_vec(),
        None => vec![0.0; point.len()],
    };

    let eval = |values: Vec<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let x = t.input(Tensor::new(point.shape().to_vec(), values)?);
        let y = f(&mut t, x)?;
        Ok(t.scalar_value(y))
    };

    let mut elements = Vec::with_capacity(point.len());
    let mut max_rel_error: f64 = 0.0;
    for i in 0..point.len() {
        let mut plus = point.data().to_vec();
        plus[i] += FD_STEP;
        let mut minus = point.data().to_vec();
        minus[i] -= FD_STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * FD_STEP);
        let a = analytic[i];
        let finite = a.is_finite() && numeric.is_finite();
        let rel_error = if finite {
            relative_error(a, numeric)
        } else {
            f64::INFINITY
        };
        let passed = finite && rel_error < tolerance;
        max_rel_error = max_rel_error.max(rel_error);
        elements.push(ElementCheck {
            index: i,
            analytic: a,
            numeric,
            rel_error,
            finite,
            passed,
        });
    }
    let passed = elements.iter().all(|e| e.passed);
    Ok(GradcheckReport {
        elements,
        max_rel_error,
        tolerance,
        passed,
    })
}
