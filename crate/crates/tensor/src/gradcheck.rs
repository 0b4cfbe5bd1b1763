//! Central finite-difference gradient checking.
//!
//! Numerical derivatives are computed from forward evaluations only, so the
//! check is independent of every gradient rule it validates.

use crate::array::Array;
use crate::error::Result;
use crate::tape::{Tape, Tensor};

/// Floor applied to the denominator of the relative error, so that gradients
/// that are zero up to rounding are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_relative_error: f64,
    /// (input index, element index) of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

/// Compares the tape's gradients of the scalar `f(inputs)` against central
/// differences with step `h` for every element of every input.
pub fn check_gradients<F>(inputs: &[Array], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|a| tape.param(a.clone())).collect();
    let loss = f(&tape, &leaves)?;
    tape.backward(&loss)?;
    let analytic: Vec<Array> = leaves
        .iter()
        .zip(inputs)
        .map(|(t, a)| t.grad().unwrap_or_else(|| Array::zeros(a.shape())))
        .collect();

    let eval = |values: &[Array]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = values.iter().map(|a| tape.constant(a.clone())).collect();
        Ok(f(&tape, &leaves)?.item())
    };

    let mut report = GradReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(grad.data()[j], numeric);
            report.checked += 1;
            if err > report.max_relative_error {
                report = GradReport {
                    max_relative_error: err,
                    worst: (i, j),
                    analytic: grad.data()[j],
                    numeric,
                    checked: report.checked,
                };
            }
        }
    }
    Ok(report)
}
