use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkSpec, ParamLayout, TensorRole};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Location, scale and truncation window of the initial std distribution.
pub const INIT_STD_LOC: f64 = 0.005;
pub const INIT_STD_SCALE: f64 = 0.1;
pub const INIT_STD_LOW: f64 = 0.005;
pub const INIT_STD_HIGH: f64 = 0.205;

const STREAM_MEANS: u64 = 0x6d65_616e;
const STREAM_STDS: u64 = 0x7374_6473;

/// Mean-field Gaussian over the flat weight vector: `theta_i ~ N(means_i, stds_i^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    means: Vec<f64>,
    stds: Vec<f64>,
    layout: ParamLayout,
}

impl VariationalParams {
    pub fn new(means: Vec<f64>, stds: Vec<f64>, layout: ParamLayout) -> Result<Self> {
        if means.len() != stds.len() || means.len() != layout.len() {
            return Err(Error::Shape(format!(
                "means ({}), stds ({}) and layout ({}) disagree in length",
                means.len(),
                stds.len(),
                layout.len()
            )));
        }
        layout.check()?;
        if let Some(i) = means.iter().position(|m| !m.is_finite()) {
            return Err(Error::NonFinite(format!("mean {i} is {}", means[i])));
        }
        if let Some(i) = stds.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "std {i} is {}, stds must be finite and positive",
                stds[i]
            )));
        }
        Ok(VariationalParams { means, stds, layout })
    }

    /// The uninformed prior: zero mean, unit variance for every weight.
    pub fn standard_normal(layout: ParamLayout) -> Self {
        let n = layout.len();
        VariationalParams {
            means: vec![0.0; n],
            stds: vec![1.0; n],
            layout,
        }
    }

    /// Point mass at `means` (all stds zero). Violates the positivity
    /// invariant on purpose; only for checking zero-noise limits.
    #[doc(hidden)]
    pub fn degenerate(means: Vec<f64>, layout: ParamLayout) -> Self {
        let n = means.len();
        VariationalParams {
            means,
            stds: vec![0.0; n],
            layout,
        }
    }

    pub(crate) fn from_parts_unchecked(means: Vec<f64>, stds: Vec<f64>, layout: ParamLayout) -> Self {
        VariationalParams { means, stds, layout }
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Divide every std by `sqrt(factor)`, i.e. multiply the precision by `factor`.
    pub fn sharpened(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 1.0) {
            return Err(Error::InvalidArgument(format!("sharpening must be >= 1, got {factor}")));
        }
        if factor == 1.0 {
            return Ok(self.clone());
        }
        let scale = factor.sqrt();
        Ok(VariationalParams {
            means: self.means.clone(),
            stds: self.stds.iter().map(|s| s / scale).collect(),
            layout: self.layout.clone(),
        })
    }
}

/// One reparameterized draw `theta = means + stds * noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSample {
    pub theta: Vec<f64>,
    pub noise: Vec<f64>,
}

pub fn sample_weights(params: &VariationalParams, seed: u64) -> WeightSample {
    let mut rng = rng_from(seed, &[]);
    let noise: Vec<f64> = (0..params.len()).map(|_| rng.sample(StandardNormal)).collect();
    let theta = params
        .means
        .iter()
        .zip(&params.stds)
        .zip(&noise)
        .map(|((m, s), e)| m + s * e)
        .collect();
    WeightSample { theta, noise }
}

/// Rejection sampler for `N(loc, scale^2)` restricted to `(low, high]`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, loc: f64, scale: f64, low: f64, high: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let x = loc + scale * z;
        if x > low && x <= high {
            return x;
        }
    }
}

/// He-normal draws for weight tensors, zeros for biases.
pub fn he_means(layout: &ParamLayout, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed, &[STREAM_MEANS]);
    let mut means = vec![0.0; layout.len()];
    for t in &layout.tensors {
        if t.role == TensorRole::Weight {
            let std = (2.0 / t.fan_in as f64).sqrt();
            for m in &mut means[t.range()] {
                let z: f64 = rng.sample(StandardNormal);
                *m = std * z;
            }
        }
    }
    means
}

pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<VariationalParams> {
    let net = Network::new(spec)?;
    Ok(init_params_for_layout(net.layout(), seed))
}

pub fn init_params_for_layout(layout: &ParamLayout, seed: u64) -> VariationalParams {
    let means = he_means(layout, seed);
    let mut rng = rng_from(seed, &[STREAM_STDS]);
    let stds = (0..layout.len())
        .map(|_| truncated_normal(&mut rng, INIT_STD_LOC, INIT_STD_SCALE, INIT_STD_LOW, INIT_STD_HIGH))
        .collect();
    VariationalParams::from_parts_unchecked(means, stds, layout.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let spec = NetworkSpec::desk_default(12);
        let a = init_params(&spec, 7).unwrap();
        let b = init_params(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&spec, 8).unwrap());
    }

    #[test]
    fn init_stds_stay_in_window() {
        let p = init_params(&NetworkSpec::desk_default(40), 3).unwrap();
        assert!(p.stds().iter().all(|&s| s > INIT_STD_LOW && s <= INIT_STD_HIGH));
    }

    #[test]
    fn he_scaling_per_layer() {
        let spec = NetworkSpec::desk_default(40);
        let p = init_params(&spec, 11).unwrap();
        for t in &p.layout().tensors {
            let vals = &p.means()[t.range()];
            match t.role {
                TensorRole::Bias => assert!(vals.iter().all(|&v| v == 0.0)),
                TensorRole::Weight if vals.len() > 1000 => {
                    let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
                    let target = 2.0 / t.fan_in as f64;
                    assert!((var / target - 1.0).abs() < 0.1, "{}: {var} vs {target}", t.name);
                }
                TensorRole::Weight => {}
            }
        }
    }

    #[test]
    fn new_rejects_bad_stds() {
        let layout = ParamLayout::flat(2);
        assert!(VariationalParams::new(vec![0.0, 0.0], vec![1.0, 0.0], layout.clone()).is_err());
        assert!(VariationalParams::new(vec![0.0], vec![1.0], layout.clone()).is_err());
        assert!(VariationalParams::new(vec![0.0, 1.0], vec![1.0, 2.0], layout).is_ok());
    }

    #[test]
    fn zero_std_sample_is_the_mean() {
        let layout = ParamLayout::flat(3);
        let p = VariationalParams::degenerate(vec![0.5, -1.0, 2.0], layout);
        let s = sample_weights(&p, 99);
        assert_eq!(s.theta, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = init_params(&NetworkSpec::desk_default(5), 1).unwrap();
        assert_eq!(sample_weights(&p, 4), sample_weights(&p, 4));
        assert_ne!(sample_weights(&p, 4).theta, sample_weights(&p, 5).theta);
    }

    #[test]
    fn sharpening_scales_precision() {
        let layout = ParamLayout::flat(2);
        let p = VariationalParams::new(vec![1.0, 2.0], vec![0.5, 2.0], layout).unwrap();
        let s = p.sharpened(4.0).unwrap();
        assert_eq!(s.stds(), &[0.25, 1.0]);
        assert_eq!(s.means(), p.means());
        assert_eq!(p.sharpened(1.0).unwrap(), p);
        assert!(p.sharpened(0.5).is_err());
    }
}
