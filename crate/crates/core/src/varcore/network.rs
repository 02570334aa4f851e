//! Network description, flat parameter layout and a hand-written
//! forward/backward pass for the small convolutional classifier.
//!
//! Activations are stored channel-planar: element `(c, y, x)` of a
//! `C x H x W` tensor lives at `c * H * W + y * W + x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Square convolution with "same"-style padding `(kernel - 1) / 2`.
    Conv {
        kernel: usize,
        channels: usize,
        stride: usize,
        activation: Activation,
    },
    Dense {
        width: usize,
        activation: Activation,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Width of the agent-state vector concatenated after pooling.
    pub state_dim: usize,
}

/// Convolutions, then a global mean pool concatenated with the agent state,
/// then dense layers. The last dense layer emits the logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Three stride-2 convolutions (8, 16, 32 channels), mean pool, one hidden
    /// dense layer of width 64 and a logit layer over `num_modes` classes.
    pub fn desk_default(num_modes: usize) -> Self {
        let conv = |channels| LayerSpec::Conv {
            kernel: 3,
            channels,
            stride: 2,
            activation: Activation::Relu,
        };
        NetworkSpec {
            input: InputShape {
                height: 64,
                width: 64,
                channels: 3,
                state_dim: 3,
            },
            layers: vec![
                conv(8),
                conv(16),
                conv(32),
                LayerSpec::Dense {
                    width: 64,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    width: num_modes,
                    activation: Activation::Identity,
                },
            ],
        }
    }

    pub fn num_outputs(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Dense { width, .. }) => *width,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Network::new(self).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorRole {
    Weight,
    Bias,
}

/// Where one layer tensor lives inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorLayout {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub fan_in: usize,
}

impl TensorLayout {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorLayout>,
}

impl ParamLayout {
    /// Layout of a single flat tensor, used by toy models outside the network.
    pub fn flat(len: usize) -> Self {
        ParamLayout {
            tensors: vec![TensorLayout {
                name: "theta".into(),
                role: TensorRole::Weight,
                shape: vec![len],
                offset: 0,
                fan_in: 1,
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.last().map_or(0, |t| t.offset + t.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tensors are contiguous, non-overlapping and start at zero.
    pub fn check(&self) -> Result<()> {
        let mut next = 0;
        for t in &self.tensors {
            if t.offset != next {
                return Err(Error::Format(format!(
                    "tensor '{}' starts at {} but previous tensor ended at {}",
                    t.name, t.offset, next
                )));
            }
            next += t.len();
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ConvPlan {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    activation: Activation,
    w_off: usize,
    b_off: usize,
}

impl ConvPlan {
    fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn out_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }

    /// Output columns `ox` whose tap `kx` lands inside the input row.
    #[inline]
    fn valid_cols(&self, kx: usize) -> std::ops::Range<usize> {
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        // ox * stride + kx - pad <= in_w - 1
        let hi = (self.in_w + self.pad - kx).div_ceil(self.stride).min(self.out_w);
        lo..hi.max(lo)
    }

    #[inline]
    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        (iy < self.in_h).then_some(iy)
    }
}

#[derive(Clone, Debug)]
struct DensePlan {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    w_off: usize,
    b_off: usize,
}

/// A validated network with its parameter layout resolved.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    layout: ParamLayout,
    convs: Vec<ConvPlan>,
    denses: Vec<DensePlan>,
    pooled_channels: usize,
    pooled_area: usize,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct Activations {
    input: Vec<f64>,
    /// Patch matrix of each convolution's input.
    conv_cols: Vec<Vec<f64>>,
    /// Post-activation output of each convolution.
    conv_out: Vec<Vec<f64>>,
    features: Vec<f64>,
    /// Post-activation output of each dense layer; the last one is the logits.
    dense_out: Vec<Vec<f64>>,
}

impl Activations {
    pub fn logits(&self) -> &[f64] {
        self.dense_out.last().map_or(&[], |v| v.as_slice())
    }
}

impl Network {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        let inp = spec.input;
        if inp.height == 0 || inp.width == 0 || inp.channels == 0 {
            return Err(Error::InvalidSpec(format!(
                "raster input must be non-empty, got {}x{}x{}",
                inp.height, inp.width, inp.channels
            )));
        }
        let mut tensors = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, role, shape: Vec<usize>, fan_in| {
            let t = TensorLayout {
                name,
                role,
                shape,
                offset,
                fan_in,
            };
            offset += t.len();
            let off = t.offset;
            tensors.push(t);
            off
        };

        let (mut c, mut h, mut w) = (inp.channels, inp.height, inp.width);
        let mut convs = Vec::new();
        let mut denses = Vec::new();
        let mut dense_in: Option<usize> = None;
        for (i, layer) in spec.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    kernel,
                    channels,
                    stride,
                    activation,
                } => {
                    if dense_in.is_some() {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: convolution after a dense layer"
                        )));
                    }
                    if kernel == 0 || channels == 0 || stride == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: kernel, channels and stride must be positive"
                        )));
                    }
                    let pad = (kernel - 1) / 2;
                    if kernel > h || kernel > w {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: kernel {kernel} does not fit a {h}x{w} input"
                        )));
                    }
                    let out_h = (h + 2 * pad - kernel) / stride + 1;
                    let out_w = (w + 2 * pad - kernel) / stride + 1;
                    let fan_in = c * kernel * kernel;
                    let w_off = push(
                        format!("conv{i}.weight"),
                        TensorRole::Weight,
                        vec![channels, c, kernel, kernel],
                        fan_in,
                    );
                    let b_off = push(format!("conv{i}.bias"), TensorRole::Bias, vec![channels], fan_in);
                    convs.push(ConvPlan {
                        in_c: c,
                        in_h: h,
                        in_w: w,
                        out_c: channels,
                        out_h,
                        out_w,
                        kernel,
                        stride,
                        pad,
                        activation,
                        w_off,
                        b_off,
                    });
                    (c, h, w) = (channels, out_h, out_w);
                }
                LayerSpec::Dense { width, activation } => {
                    if width == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i}: zero-width dense layer")));
                    }
                    let in_dim = dense_in.unwrap_or(c + inp.state_dim);
                    let w_off = push(
                        format!("dense{i}.weight"),
                        TensorRole::Weight,
                        vec![width, in_dim],
                        in_dim,
                    );
                    let b_off = push(format!("dense{i}.bias"), TensorRole::Bias, vec![width], in_dim);
                    denses.push(DensePlan {
                        in_dim,
                        out_dim: width,
                        activation,
                        w_off,
                        b_off,
                    });
                    dense_in = Some(width);
                }
            }
        }
        if denses.is_empty() {
            return Err(Error::InvalidSpec("network needs at least one dense layer".into()));
        }
        Ok(Network {
            spec: spec.clone(),
            layout: ParamLayout { tensors },
            convs,
            denses,
            pooled_channels: c,
            pooled_area: h * w,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.denses.last().map_or(0, |d| d.out_dim)
    }

    fn check_inputs(&self, weights: &[f64], raster: &[f32], state: &[f64]) -> Result<()> {
        let inp = self.spec.input;
        if weights.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} weights, got {}",
                self.num_params(),
                weights.len()
            )));
        }
        let raster_len = inp.height * inp.width * inp.channels;
        if raster.len() != raster_len {
            return Err(Error::Shape(format!(
                "expected raster of {} values ({}x{}x{}), got {}",
                raster_len,
                inp.height,
                inp.width,
                inp.channels,
                raster.len()
            )));
        }
        if state.len() != inp.state_dim {
            return Err(Error::Shape(format!(
                "expected agent state of width {}, got {}",
                inp.state_dim,
                state.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, weights: &[f64], raster: &[f32], state: &[f64]) -> Result<Vec<f64>> {
        let mut acts = Activations::default();
        self.forward_cached(weights, raster, state, &mut acts)?;
        Ok(acts.dense_out.pop().unwrap_or_default())
    }

    pub fn forward_cached(&self, weights: &[f64], raster: &[f32], state: &[f64], acts: &mut Activations) -> Result<()> {
        self.check_inputs(weights, raster, state)?;
        acts.input.clear();
        acts.input.extend(raster.iter().map(|&v| f64::from(v)));
        acts.conv_out.resize(self.convs.len(), Vec::new());
        acts.conv_cols.resize(self.convs.len(), Vec::new());
        for (i, plan) in self.convs.iter().enumerate() {
            let (before, rest) = acts.conv_out.split_at_mut(i);
            let input = if i == 0 { &acts.input } else { &before[i - 1] };
            im2col(plan, input, &mut acts.conv_cols[i]);
            let out = &mut rest[0];
            out.clear();
            out.resize(plan.out_len(), 0.0);
            conv_forward(plan, weights, &acts.conv_cols[i], out);
        }

        let pooled_src = acts.conv_out.last().unwrap_or(&acts.input);
        acts.features.clear();
        let area = self.pooled_area;
        for ch in 0..self.pooled_channels {
            let plane = &pooled_src[ch * area..(ch + 1) * area];
            acts.features.push(plane.iter().sum::<f64>() / area as f64);
        }
        acts.features.extend_from_slice(state);

        acts.dense_out.resize(self.denses.len(), Vec::new());
        for (i, plan) in self.denses.iter().enumerate() {
            let (before, rest) = acts.dense_out.split_at_mut(i);
            let input = if i == 0 { &acts.features } else { &before[i - 1] };
            let out = &mut rest[0];
            out.clear();
            out.extend((0..plan.out_dim).map(|j| {
                let row = &weights[plan.w_off + j * plan.in_dim..plan.w_off + (j + 1) * plan.in_dim];
                let pre = weights[plan.b_off + j] + dot(row, input);
                plan.activation.apply(pre)
            }));
        }
        Ok(())
    }

    /// Accumulate `d(objective)/d(weights)` into `grad`, given the gradient of
    /// the objective with respect to the logits of the cached forward pass.
    pub fn backward(&self, weights: &[f64], acts: &Activations, dlogits: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.num_params());
        debug_assert_eq!(dlogits.len(), self.num_outputs());

        let mut upstream = dlogits.to_vec();
        for (i, plan) in self.denses.iter().enumerate().rev() {
            let out = &acts.dense_out[i];
            let input = if i == 0 { &acts.features } else { &acts.dense_out[i - 1] };
            let dpre: Vec<f64> = upstream
                .iter()
                .zip(out)
                .map(|(&g, &o)| match plan.activation {
                    Activation::Relu if o <= 0.0 => 0.0,
                    _ => g,
                })
                .collect();
            let mut dinput = vec![0.0; plan.in_dim];
            for (j, &d) in dpre.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[plan.b_off + j] += d;
                let w_row = plan.w_off + j * plan.in_dim;
                let g_row = &mut grad[w_row..w_row + plan.in_dim];
                for (g, &x) in g_row.iter_mut().zip(input) {
                    *g += d * x;
                }
                let row = &weights[w_row..w_row + plan.in_dim];
                for (di, &wv) in dinput.iter_mut().zip(row) {
                    *di += d * wv;
                }
            }
            upstream = dinput;
        }

        if self.convs.is_empty() {
            return;
        }
        // Gradient w.r.t. the pooled channels; the agent-state tail is an input.
        let area = self.pooled_area as f64;
        let last = self.convs.len() - 1;
        let mut dout = vec![0.0; self.convs[last].out_len()];
        let plane = self.pooled_area;
        for ch in 0..self.pooled_channels {
            let g = upstream[ch] / area;
            dout[ch * plane..(ch + 1) * plane].fill(g);
        }
        for (i, plan) in self.convs.iter().enumerate().rev() {
            let out = &acts.conv_out[i];
            if plan.activation == Activation::Relu {
                for (d, &o) in dout.iter_mut().zip(out) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let mut dinput = if i > 0 { Some(vec![0.0; plan.in_len()]) } else { None };
            conv_backward(plan, weights, &acts.conv_cols[i], &dout, grad, dinput.as_deref_mut());
            match dinput {
                Some(d) => dout = d,
                None => break,
            }
        }
    }
}

/// Dot product with four interleaved partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Unfold the input into a `(in_c * k * k) x (out_h * out_w)` patch matrix;
/// taps falling into the zero padding stay zero.
fn im2col(p: &ConvPlan, input: &[f64], cols: &mut Vec<f64>) {
    let (k, s) = (p.kernel, p.stride);
    let positions = p.out_h * p.out_w;
    cols.clear();
    cols.resize(p.in_c * k * k * positions, 0.0);
    let in_plane_len = p.in_h * p.in_w;
    for ic in 0..p.in_c {
        let in_plane = &input[ic * in_plane_len..(ic + 1) * in_plane_len];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ic * k + ky) * k + kx) * positions;
                let col_row = &mut cols[row..row + positions];
                let valid = p.valid_cols(kx);
                for oy in 0..p.out_h {
                    let Some(iy) = p.input_row(oy, ky) else { continue };
                    let in_row = &in_plane[iy * p.in_w..(iy + 1) * p.in_w];
                    let dst = &mut col_row[oy * p.out_w..(oy + 1) * p.out_w];
                    for ox in valid.clone() {
                        dst[ox] = in_row[ox * s + kx - p.pad];
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn conv_forward(p: &ConvPlan, weights: &[f64], cols: &[f64], out: &mut [f64]) {
    let taps = p.in_c * p.kernel * p.kernel;
    let positions = p.out_h * p.out_w;
    for oc in 0..p.out_c {
        let out_plane = &mut out[oc * positions..(oc + 1) * positions];
        out_plane.fill(weights[p.b_off + oc]);
        let w_row = &weights[p.w_off + oc * taps..p.w_off + (oc + 1) * taps];
        for (j, &wv) in w_row.iter().enumerate() {
            axpy(wv, &cols[j * positions..(j + 1) * positions], out_plane);
        }
        if p.activation == Activation::Relu {
            for v in out_plane.iter_mut() {
                *v = v.max(0.0);
            }
        }
    }
}

fn conv_backward(
    p: &ConvPlan,
    weights: &[f64],
    cols: &[f64],
    dpre: &[f64],
    grad: &mut [f64],
    dinput: Option<&mut [f64]>,
) {
    let (k, s) = (p.kernel, p.stride);
    let taps = p.in_c * k * k;
    let positions = p.out_h * p.out_w;
    let mut dcols = dinput.is_some().then(|| vec![0.0; taps * positions]);
    for oc in 0..p.out_c {
        let d_plane = &dpre[oc * positions..(oc + 1) * positions];
        if d_plane.iter().all(|&v| v == 0.0) {
            continue;
        }
        grad[p.b_off + oc] += d_plane.iter().sum::<f64>();
        let w_base = p.w_off + oc * taps;
        for j in 0..taps {
            grad[w_base + j] += dot(d_plane, &cols[j * positions..(j + 1) * positions]);
        }
        if let Some(dc) = dcols.as_deref_mut() {
            for j in 0..taps {
                axpy(
                    weights[w_base + j],
                    d_plane,
                    &mut dc[j * positions..(j + 1) * positions],
                );
            }
        }
    }
    let (Some(dc), Some(din)) = (dcols, dinput) else { return };
    let in_plane_len = p.in_h * p.in_w;
    for ic in 0..p.in_c {
        let din_plane = &mut din[ic * in_plane_len..(ic + 1) * in_plane_len];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ic * k + ky) * k + kx) * positions;
                let valid = p.valid_cols(kx);
                for oy in 0..p.out_h {
                    let Some(iy) = p.input_row(oy, ky) else { continue };
                    let src = &dc[row + oy * p.out_w..row + (oy + 1) * p.out_w];
                    let din_row = &mut din_plane[iy * p.in_w..(iy + 1) * p.in_w];
                    for ox in valid.clone() {
                        din_row[ox * s + kx - p.pad] += src[ox];
                    }
                }
            }
        }
    }
}

/// Run the network on one input.
pub fn forward(spec: &NetworkSpec, weights: &[f64], raster: &[f32], agent_state: &[f64]) -> Result<Vec<f64>> {
    Network::new(spec)?.forward(weights, raster, agent_state)
}
