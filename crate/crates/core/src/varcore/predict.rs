use super::network::Network;
use super::objective::softmax;
use super::params::{sample_weights, VariationalParams};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Average of the softmax outputs over `n_samples` weight draws.
pub fn mc_predict(
    net: &Network,
    params: &VariationalParams,
    raster: &[f32],
    state: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let mut probs = vec![0.0; net.num_outputs()];
    // Running mean, so identical draws reproduce a single softmax exactly.
    for s in 0..n_samples {
        let draw = sample_weights(params, derive_seed(seed, &[s as u64]));
        let p = softmax(&net.forward(&draw.theta, raster, state)?);
        let k = (s + 1) as f64;
        for (acc, v) in probs.iter_mut().zip(p) {
            *acc += (v - *acc) / k;
        }
    }
    Ok(probs)
}

/// Softmax of a single noise-free forward pass.
pub fn deterministic_predict(net: &Network, weights: &[f64], raster: &[f32], state: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&net.forward(weights, raster, state)?))
}
