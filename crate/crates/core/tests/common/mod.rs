#![allow(dead_code)]

pub mod suite;

use gvcl::rng::rng_from;
use gvcl::varcore::{
    beta_elbo_loss, Activation, InputShape, LabeledInput, LayerSpec, Network, NetworkSpec, Objective, VariationalParams,
};
use rand::Rng;
use rand_distr::StandardNormal;

/// A small conv + dense network with well under 200 parameters.
pub fn small_spec(outputs: usize) -> NetworkSpec {
    NetworkSpec {
        input: InputShape {
            height: 5,
            width: 4,
            channels: 2,
            state_dim: 2,
        },
        layers: vec![
            LayerSpec::Conv {
                kernel: 3,
                channels: 3,
                stride: 2,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                width: 5,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                width: outputs,
                activation: Activation::Identity,
            },
        ],
    }
}

pub struct OwnedExample {
    pub raster: Vec<f32>,
    pub state: Vec<f64>,
    pub class: usize,
    pub multi_label: Vec<f64>,
    pub weight: f64,
}

impl OwnedExample {
    pub fn view(&self) -> LabeledInput<'_> {
        LabeledInput {
            raster: &self.raster,
            state: &self.state,
            class: Some(self.class),
            multi_label: Some(&self.multi_label),
            weight: self.weight,
        }
    }
}

pub fn random_examples(spec: &NetworkSpec, n: usize, seed: u64) -> Vec<OwnedExample> {
    let mut rng = rng_from(seed, &[0xe8]);
    let inp = spec.input;
    let k = spec.num_outputs();
    (0..n)
        .map(|_| OwnedExample {
            raster: (0..inp.height * inp.width * inp.channels)
                .map(|_| rng.random::<f32>())
                .collect(),
            state: (0..inp.state_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
            class: rng.random_range(0..k),
            multi_label: (0..k).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect(),
            weight: 1.0,
        })
        .collect()
}

/// Random params with stds spread over roughly (0.05, 0.5).
pub fn random_params(net: &Network, seed: u64) -> VariationalParams {
    let mut rng = rng_from(seed, &[0x9a]);
    let n = net.num_params();
    let means = (0..n).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let stds = (0..n).map(|_| rng.random_range(0.05..0.5)).collect();
    VariationalParams::new(means, stds, net.layout().clone()).unwrap()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(s: f64) -> f64 {
    s + (-(-s).exp_m1()).ln()
}

/// Largest per-coordinate relative error between the analytic gradient of
/// the beta-ELBO loss with respect to `(means, rho)` and central finite
/// differences at step `h`. Coordinates where both values are below `floor`
/// count as exact.
pub fn elbo_gradcheck(
    objective: &Objective,
    net: &Network,
    params: &VariationalParams,
    batch: &[LabeledInput<'_>],
    seed: u64,
    h: f64,
    floor: f64,
) -> (f64, usize) {
    let eval = beta_elbo_loss(objective, net, params, batch, 1, seed).unwrap();
    let loss_at = |means: Vec<f64>, stds: Vec<f64>| {
        let p = VariationalParams::new(means, stds, params.layout().clone()).unwrap();
        beta_elbo_loss(objective, net, &p, batch, 1, seed).unwrap().loss
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..params.len() {
        let mut plus = params.means().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (loss_at(plus, params.stds().to_vec()) - loss_at(minus, params.stds().to_vec())) / (2.0 * h);
        worst = worst.max(rel_err(eval.grad.means[i], fd, floor));

        let rho = softplus_inv(params.stds()[i]);
        let mut plus = params.stds().to_vec();
        let mut minus = plus.clone();
        plus[i] = softplus(rho + h);
        minus[i] = softplus(rho - h);
        let fd = (loss_at(params.means().to_vec(), plus) - loss_at(params.means().to_vec(), minus)) / (2.0 * h);
        worst = worst.max(rel_err(eval.grad.rhos[i], fd, floor));
        checked += 2;
    }
    (worst, checked)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

pub fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}
