//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used, so the check is independent of the
//! tape's backward rules.

use crate::autodiff::{evaluate, gradient, ParamVars, Tape, Var};
use crate::error::Result;
use crate::params::{GradSet, ParamSet};
use crate::tensor::Tensor;

/// Default perturbation for the central difference.
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub coordinates_checked: usize,
}

/// Numeric gradient of `loss_fn` at `params` by central differences.
pub fn numeric_gradient<F>(params: &ParamSet, step: f64, loss_fn: F) -> Result<GradSet>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut out = Vec::new();
    for (name, tensor) in params.iter() {
        let mut grad = vec![0.0; tensor.len()];
        for (k, g) in grad.iter_mut().enumerate() {
            let plus = perturbed(params, name, k, step)?;
            let minus = perturbed(params, name, k, -step)?;
            let fp = evaluate(&plus, &loss_fn)?.item()?;
            let fm = evaluate(&minus, &loss_fn)?.item()?;
            *g = (fp - fm) / (2.0 * step);
        }
        out.push((name.to_string(), Tensor::new(tensor.shape().to_vec(), grad)?));
    }
    Ok(GradSet::from_tensors(out))
}

fn perturbed(params: &ParamSet, name: &str, k: usize, delta: f64) -> Result<ParamSet> {
    let mut out = ParamSet::new();
    for (n, t) in params.iter() {
        if n == name {
            let mut data = t.data().to_vec();
            data[k] += delta;
            out.insert(n, Tensor::new(t.shape().to_vec(), data)?)?;
        } else {
            out.insert(n, t.clone())?;
        }
    }
    Ok(out)
}

/// Compares the tape gradient against central differences.
///
/// `floor` keeps the relative error meaningful for coordinates whose true
/// gradient is (near) zero.
pub fn check_gradient<F>(params: &ParamSet, floor: f64, loss_fn: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let (_, analytic) = gradient(params, &loss_fn)?;
    let numeric = numeric_gradient(params, STEP, &loss_fn)?;
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        coordinates_checked: 0,
    };
    for ((name, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let denom = x.abs().max(y.abs()).max(floor);
            let rel = (x - y).abs() / denom;
            report.coordinates_checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_parameter = name.to_string();
            }
        }
    }
    Ok(report)
}
