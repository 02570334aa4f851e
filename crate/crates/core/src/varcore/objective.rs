//! The likelihood-tempered evidence lower bound and its reparameterized
//! gradient.
//!
//! Per minibatch the loss is
//!
//! ```text
//! loss = -(1 / (B * n_mc)) * sum_{s, i} w_i * log p(y_i | x_i, theta_s)
//!        + beta * kl_minibatch_scale * KL(q || prior)
//! ```
//!
//! with `theta_s = mu + sigma * eps_s`. Gradients are returned with respect to
//! the means and the unconstrained `rho` where `sigma = softplus(rho)`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::kl::kl_with_grad;
use super::network::{Activations, Network};
use super::params::{sample_weights, VariationalParams};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodKind {
    /// Independent sigmoid Bernoulli term per logit.
    MultiLabelBce,
    /// Softmax over the logits, one target class.
    MultiClassCe,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    StandardNormal,
    Gaussian(VariationalParams),
}

impl Prior {
    pub fn resolve(&self, params: &VariationalParams) -> Result<Cow<'_, VariationalParams>> {
        match self {
            Prior::StandardNormal => Ok(Cow::Owned(VariationalParams::standard_normal(params.layout().clone()))),
            Prior::Gaussian(p) if p.len() == params.len() => Ok(Cow::Borrowed(p)),
            Prior::Gaussian(p) => Err(Error::Shape(format!(
                "prior has {} parameters, model has {}",
                p.len(),
                params.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub kind: LikelihoodKind,
    pub beta: f64,
    pub prior: Prior,
    /// `batch_size / task_dataset_size`.
    pub kl_minibatch_scale: f64,
}

impl Objective {
    pub fn new(kind: LikelihoodKind, beta: f64, prior: Prior, batch_size: usize, dataset_size: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
        }
        if batch_size == 0 || dataset_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size and dataset size must be positive".into(),
            ));
        }
        Ok(Objective {
            kind,
            beta,
            prior,
            kl_minibatch_scale: batch_size as f64 / dataset_size as f64,
        })
    }
}

/// A differentiable log-likelihood over a flat weight vector.
pub trait LikelihoodModel {
    type Example<'e>;

    fn num_params(&self) -> usize;

    fn example_weight(&self, _example: &Self::Example<'_>) -> f64 {
        1.0
    }

    /// Returns `log p(y | x, theta)`. When `grad` is `Some((g, scale))`,
    /// `scale * d log p / d theta` is added into `g`.
    fn log_likelihood(
        &self,
        theta: &[f64],
        example: &Self::Example<'_>,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<f64>;
}

/// Gradient with respect to `(means, rho)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub means: Vec<f64>,
    pub rhos: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(n: usize) -> Self {
        ParamGrad {
            means: vec![0.0; n],
            rhos: vec![0.0; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboEval {
    pub loss: f64,
    /// Weighted negative log-likelihood averaged over batch and samples.
    pub nll: f64,
    /// Unscaled `KL(q || prior)`; zero when `beta == 0` (not evaluated).
    pub kl: f64,
    pub grad: ParamGrad,
}

/// Negative beta-ELBO of a generic likelihood model. The `n_mc` weight draws
/// are each shared by the whole batch.
#[allow(clippy::too_many_arguments)]
pub fn beta_elbo<M: LikelihoodModel>(
    model: &M,
    beta: f64,
    kl_minibatch_scale: f64,
    prior: &Prior,
    params: &VariationalParams,
    batch: &[M::Example<'_>],
    n_mc: usize,
    seed: u64,
) -> Result<ElboEval> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    if model.num_params() != params.len() {
        return Err(Error::Shape(format!(
            "model has {} parameters, variational params have {}",
            model.num_params(),
            params.len()
        )));
    }
    let n = params.len();
    let mut grad = ParamGrad::zeros(n);
    let mut sigma_grad = vec![0.0; n];
    let mut nll = 0.0;
    if !batch.is_empty() {
        let norm = 1.0 / (batch.len() * n_mc) as f64;
        let mut g_theta = vec![0.0; n];
        for s in 0..n_mc {
            let draw = sample_weights(params, derive_seed(seed, &[s as u64]));
            g_theta.fill(0.0);
            for ex in batch {
                let w = model.example_weight(ex);
                let ll = model.log_likelihood(&draw.theta, ex, Some((&mut g_theta, -w * norm)))?;
                nll -= w * norm * ll;
            }
            for i in 0..n {
                grad.means[i] += g_theta[i];
                sigma_grad[i] += g_theta[i] * draw.noise[i];
            }
        }
    }

    let mut kl = 0.0;
    let mut loss = nll;
    if beta != 0.0 {
        let prior = prior.resolve(params)?;
        let (value, g_mu, g_sd) = kl_with_grad(params, &prior)?;
        kl = value;
        let coeff = beta * kl_minibatch_scale;
        loss += coeff * kl;
        for i in 0..n {
            grad.means[i] += coeff * g_mu[i];
            sigma_grad[i] += coeff * g_sd[i];
        }
    }
    // d sigma / d rho = sigmoid(rho) = 1 - exp(-sigma)
    for ((g, &sg), &sd) in grad.rhos.iter_mut().zip(&sigma_grad).zip(params.stds()) {
        *g = sg * -(-sd).exp_m1();
    }
    Ok(ElboEval { loss, nll, kl, grad })
}

/// Per-example classification loss applied to the logits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ClassifierLoss {
    Bce,
    Ce,
    /// `CE + lambda * BCE` on the same logits.
    CePlusBce {
        lambda: f64,
    },
}

impl From<LikelihoodKind> for ClassifierLoss {
    fn from(kind: LikelihoodKind) -> Self {
        match kind {
            LikelihoodKind::MultiLabelBce => ClassifierLoss::Bce,
            LikelihoodKind::MultiClassCe => ClassifierLoss::Ce,
        }
    }
}

/// One network input with whichever labels the task provides.
#[derive(Clone, Copy, Debug)]
pub struct LabeledInput<'a> {
    pub raster: &'a [f32],
    pub state: &'a [f64],
    pub class: Option<usize>,
    pub multi_label: Option<&'a [f64]>,
    pub weight: f64,
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl ClassifierLoss {
    fn check(&self, ex: &LabeledInput<'_>, outputs: usize) -> Result<()> {
        let need_class = matches!(self, ClassifierLoss::Ce | ClassifierLoss::CePlusBce { .. });
        let need_multi = matches!(self, ClassifierLoss::Bce | ClassifierLoss::CePlusBce { .. });
        if need_class {
            match ex.class {
                None => return Err(Error::LabelMismatch("cross-entropy needs a class index".into())),
                Some(c) if c >= outputs => {
                    return Err(Error::LabelMismatch(format!(
                        "class {c} out of range for {outputs} logits"
                    )))
                }
                _ => {}
            }
        }
        if need_multi {
            match ex.multi_label {
                None => return Err(Error::LabelMismatch("binary cross-entropy needs a label vector".into())),
                Some(y) if y.len() != outputs => {
                    return Err(Error::LabelMismatch(format!(
                        "label vector of length {} for {outputs} logits",
                        y.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Loss value and `d loss / d logits`.
    pub fn eval(&self, logits: &[f64], ex: &LabeledInput<'_>) -> Result<(f64, Vec<f64>)> {
        self.check(ex, logits.len())?;
        let mut dz = vec![0.0; logits.len()];
        let mut loss = 0.0;
        if let ClassifierLoss::Ce | ClassifierLoss::CePlusBce { .. } = self {
            let c = ex.class.unwrap_or_default();
            let lse = log_sum_exp(logits);
            loss += lse - logits[c];
            for (d, &z) in dz.iter_mut().zip(logits) {
                *d = (z - lse).exp();
            }
            dz[c] -= 1.0;
        }
        let bce_weight = match self {
            ClassifierLoss::Bce => 1.0,
            ClassifierLoss::CePlusBce { lambda } => *lambda,
            ClassifierLoss::Ce => return Ok((loss, dz)),
        };
        let y = ex.multi_label.unwrap_or_default();
        let mut bce = 0.0;
        for ((d, &z), &t) in dz.iter_mut().zip(logits).zip(y) {
            bce += softplus(z) - t * z;
            *d += bce_weight * (sigmoid(z) - t);
        }
        Ok((loss + bce_weight * bce, dz))
    }
}

/// The classifier network viewed as a likelihood over its weights.
pub struct ClassifierLikelihood<'n> {
    pub net: &'n Network,
    pub loss: ClassifierLoss,
}

impl LikelihoodModel for ClassifierLikelihood<'_> {
    type Example<'e> = LabeledInput<'e>;

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn example_weight(&self, example: &Self::Example<'_>) -> f64 {
        example.weight
    }

    fn log_likelihood(&self, theta: &[f64], ex: &Self::Example<'_>, grad: Option<(&mut [f64], f64)>) -> Result<f64> {
        let mut acts = Activations::default();
        self.net.forward_cached(theta, ex.raster, ex.state, &mut acts)?;
        let (loss, mut dz) = self.loss.eval(acts.logits(), ex)?;
        if let Some((g, scale)) = grad {
            if scale != 0.0 {
                // d log p = -d loss
                for d in dz.iter_mut() {
                    *d *= -scale;
                }
                self.net.backward(theta, &acts, &dz, g);
            }
        }
        Ok(-loss)
    }
}

fn check_labels(kind: LikelihoodKind, batch: &[LabeledInput<'_>]) -> Result<()> {
    for (i, ex) in batch.iter().enumerate() {
        let ok = match kind {
            LikelihoodKind::MultiClassCe => ex.class.is_some(),
            LikelihoodKind::MultiLabelBce => ex.multi_label.is_some(),
        };
        if !ok {
            return Err(Error::LabelMismatch(format!(
                "example {i} lacks the label required by {kind:?}"
            )));
        }
    }
    Ok(())
}

/// Negative beta-ELBO of the classifier network on one minibatch.
pub fn beta_elbo_loss(
    objective: &Objective,
    net: &Network,
    params: &VariationalParams,
    batch: &[LabeledInput<'_>],
    n_mc: usize,
    seed: u64,
) -> Result<ElboEval> {
    check_labels(objective.kind, batch)?;
    let model = ClassifierLikelihood {
        net,
        loss: objective.kind.into(),
    };
    beta_elbo(
        &model,
        objective.beta,
        objective.kl_minibatch_scale,
        &objective.prior,
        params,
        batch,
        n_mc,
        seed,
    )
}

/// Mean weighted loss of a deterministic network and its weight gradient.
pub fn deterministic_loss(
    net: &Network,
    loss: ClassifierLoss,
    weights: &[f64],
    batch: &[LabeledInput<'_>],
) -> Result<(f64, Vec<f64>)> {
    let model = ClassifierLikelihood { net, loss };
    let mut grad = vec![0.0; weights.len()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let norm = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let ll = model.log_likelihood(weights, ex, Some((&mut grad, -ex.weight * norm)))?;
        total -= ex.weight * norm * ll;
    }
    Ok((total, grad))
}
