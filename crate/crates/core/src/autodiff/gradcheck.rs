//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
}

/// `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between an analytic gradient and central
/// differences of `f` around `x`.
pub fn max_relative_error(analytic: &[f64], x: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
    let mut probe = x.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe)?;
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe)?;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Checks the gradient of a scalar-valued graph function of one input.
pub fn grad_check<F>(op: F, input: &Tensor, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(input.clone());
    let out = op(&mut g, x)?;
    g.backward(out)?;
    let analytic = g.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);

    let eval = |data: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(input.shape().to_vec(), data.to_vec())?);
        let out = op(&mut g, x)?;
        Ok(g.value(out).data()[0])
    };
    let max_rel_err = max_relative_error(&analytic, input.data(), eval)?;
    Ok(GradCheckReport {
        max_rel_err,
        pass: max_rel_err <= tol,
    })
}
