use super::objective::{softplus, ParamGrad};
use super::params::VariationalParams;
use crate::error::{Error, Result};

/// Inverse of `softplus`, i.e. the unconstrained `rho` for a positive std.
pub fn softplus_inv(sigma: f64) -> f64 {
    sigma + (-(-sigma).exp_m1()).ln()
}

fn check_step(lr: f64, grads: &[&[f64]]) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    for g in grads {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i} is {}", g[i])));
        }
    }
    Ok(())
}

/// One SGD step on `(means, rho)`; stds are mapped back through softplus so
/// they stay positive.
pub fn sgd_step(params: &VariationalParams, grad: &ParamGrad, lr: f64) -> Result<VariationalParams> {
    step(params, grad, lr, None)
}

/// SGD step where the mean part of a `coeff * KL(q || prior)` term already
/// contained in `grad` is taken implicitly. Per coordinate, with
/// `a = coeff / prior_std^2`,
///
/// ```text
/// mean' = (mean - lr * (g - a * (mean - prior_mean)) + lr * a * prior_mean) / (1 + lr * a)
/// ```
///
/// which has the same fixed points as [`sgd_step`] but stays stable for
/// arbitrarily sharp priors. With `coeff == 0` it equals [`sgd_step`].
pub fn sgd_step_implicit_prior(
    params: &VariationalParams,
    grad: &ParamGrad,
    lr: f64,
    prior: &VariationalParams,
    coeff: f64,
) -> Result<VariationalParams> {
    if prior.len() != params.len() {
        return Err(Error::Shape(format!(
            "prior has {} parameters, model has {}",
            prior.len(),
            params.len()
        )));
    }
    if !(coeff.is_finite() && coeff >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "prior coefficient must be non-negative, got {coeff}"
        )));
    }
    step(params, grad, lr, Some((prior, coeff)))
}

fn step(
    params: &VariationalParams,
    grad: &ParamGrad,
    lr: f64,
    prior: Option<(&VariationalParams, f64)>,
) -> Result<VariationalParams> {
    if grad.means.len() != params.len() || grad.rhos.len() != params.len() {
        return Err(Error::Shape(format!(
            "gradient of length {}/{} for {} parameters",
            grad.means.len(),
            grad.rhos.len(),
            params.len()
        )));
    }
    check_step(lr, &[&grad.means, &grad.rhos])?;
    let means = match prior {
        Some((p, coeff)) if coeff != 0.0 => params
            .means()
            .iter()
            .zip(&grad.means)
            .zip(p.means().iter().zip(p.stds()))
            .map(|((&m, &g), (&pm, &ps))| {
                let a = coeff / (ps * ps);
                let g_rest = g - a * (m - pm);
                (m - lr * g_rest + lr * a * pm) / (1.0 + lr * a)
            })
            .collect(),
        _ => params
            .means()
            .iter()
            .zip(&grad.means)
            .map(|(m, g)| m - lr * g)
            .collect(),
    };
    let stds = params
        .stds()
        .iter()
        .zip(&grad.rhos)
        .map(|(&s, &g)| {
            if g == 0.0 {
                s
            } else {
                softplus(softplus_inv(s) - lr * g).max(f64::MIN_POSITIVE)
            }
        })
        .collect();
    Ok(VariationalParams::from_parts_unchecked(
        means,
        stds,
        params.layout().clone(),
    ))
}

/// In-place SGD step for deterministic weights.
pub fn sgd_step_deterministic(weights: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if weights.len() != grad.len() {
        return Err(Error::Shape(format!(
            "gradient of length {} for {} weights",
            grad.len(),
            weights.len()
        )));
    }
    check_step(lr, &[grad])?;
    for (w, g) in weights.iter_mut().zip(grad) {
        *w -= lr * g;
    }
    Ok(())
}

/// Linear decay from `base_lr` at epoch 0 towards zero at `total_epochs`.
pub fn lr_schedule(epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    if total_epochs == 0 {
        return base_lr;
    }
    base_lr * (1.0 - epoch as f64 / total_epochs as f64)
}
