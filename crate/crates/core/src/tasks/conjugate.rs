//! One-weight linear-Gaussian regression, where sequential Bayesian updates
//! have a closed form. Used to check that chained variational training
//! recovers the exact posterior.

use super::train::{variational_epoch, EpochContext, Schedule};
use crate::error::{Error, Result};
use crate::varcore::{LikelihoodModel, ParamLayout, Prior, VariationalParams};

/// `y = theta * x + noise`, `noise ~ N(0, noise_std^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearGaussian {
    pub noise_std: f64,
}

impl LikelihoodModel for LinearGaussian {
    type Example<'e> = (f64, f64);

    fn num_params(&self) -> usize {
        1
    }

    fn log_likelihood(&self, theta: &[f64], &(x, y): &(f64, f64), grad: Option<(&mut [f64], f64)>) -> Result<f64> {
        let var = self.noise_std * self.noise_std;
        let r = y - theta[0] * x;
        if let Some((g, scale)) = grad {
            g[0] += scale * r * x / var;
        }
        Ok(-0.5 * (2.0 * std::f64::consts::PI * var).ln() - r * r / (2.0 * var))
    }
}

/// Exact posterior `(mean, std)` after observing `data` under prior `N(mean, std^2)`.
pub fn analytic_posterior(model: &LinearGaussian, prior: (f64, f64), data: &[(f64, f64)]) -> (f64, f64) {
    let var = model.noise_std * model.noise_std;
    let mut precision = 1.0 / (prior.1 * prior.1);
    let mut shift = prior.0 * precision;
    for &(x, y) in data {
        precision += x * x / var;
        shift += x * y / var;
    }
    (shift / precision, precision.sqrt().recip())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub n_mc: usize,
    pub beta: f64,
    pub batch_size: usize,
    pub schedule: Schedule,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            epochs: 3000,
            lr: 0.02,
            n_mc: 16,
            beta: 1.0,
            batch_size: 1,
            schedule: Schedule::LinearDecay,
        }
    }
}

/// Train one task per entry of `tasks`, each against the previous posterior
/// (the first against `N(0, 1)`) and starting from it. Returns every
/// posterior `(mean, std)` in order.
pub fn fit_chain(
    model: &LinearGaussian,
    tasks: &[Vec<(f64, f64)>],
    cfg: &ChainConfig,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if tasks.iter().any(|t| t.is_empty()) {
        return Err(Error::InvalidArgument("every task needs data".into()));
    }
    let layout = ParamLayout::flat(1);
    let mut prior = VariationalParams::standard_normal(layout);
    let mut out = Vec::with_capacity(tasks.len());
    for (t, data) in tasks.iter().enumerate() {
        let mut params = prior.clone();
        let gaussian = Prior::Gaussian(prior.clone());
        let mut streak = 0;
        for epoch in 0..cfg.epochs {
            let ctx = EpochContext {
                seed,
                tag: t as u64 + 1,
                epoch,
                batch_size: cfg.batch_size,
                lr: cfg.schedule.lr(epoch, cfg.epochs, cfg.lr),
            };
            let (next, _) = variational_epoch(
                model,
                data.len(),
                |i| data[i],
                params,
                &gaussian,
                cfg.beta,
                cfg.n_mc,
                &ctx,
                &mut streak,
            )?;
            params = next;
        }
        out.push((params.means()[0], params.stds()[0]));
        prior = params;
    }
    Ok(out)
}
