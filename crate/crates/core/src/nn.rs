//! The conditional noise-prediction network and its training machinery.
//!
//! The network is a plain multilayer perceptron over the concatenation
//! `[z_t, time_embed(t), cond]` with SiLU hidden activations and a linear
//! output of the data dimension. All parameters live in one flat
//! [`ParamVector`]; the per-layer offsets are given by
//! [`Architecture::layers`], weights first (row-major, `fan_out x fan_in`)
//! followed by the bias of the same layer.
//!
//! Gradients are exact reverse-mode derivatives written by hand for this
//! fixed architecture.

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::rng;

pub const DATA_DIM: usize = 2;
pub const TIME_EMBED_DIM: usize = 16;
pub const HIDDEN_WIDTHS: [usize; 2] = [64, 64];

/// Longest period of the sinusoidal time features, in timesteps.
pub const TIME_EMBED_MAX_PERIOD: f64 = 1000.0;

/// Sinusoidal timestep features: `sin(t / w_k)` for the first half and
/// `cos(t / w_k)` for the second, with `w_k = P^(k / half)` for
/// `P = TIME_EMBED_MAX_PERIOD`.
pub fn time_embed(t: usize, dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    time_embed_into(t, &mut out)?;
    Ok(out)
}

fn time_embed_into(t: usize, out: &mut [f64]) -> Result<()> {
    let dim = out.len();
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!("time embedding dimension must be even and positive, got {dim}")));
    }
    let half = dim / 2;
    for k in 0..half {
        let period = TIME_EMBED_MAX_PERIOD.powf(k as f64 / half as f64);
        let phase = t as f64 / period;
        out[k] = phase.sin();
        out[half + k] = phase.cos();
    }
    Ok(())
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Shape of the denoiser. Immutable once a network has been built from it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub data_dim: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
    pub hidden: Vec<usize>,
}

/// Location of one dense layer inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

impl Architecture {
    pub fn new(data_dim: usize, time_dim: usize, cond_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::Config("data dimension must be positive".into()));
        }
        if time_dim == 0 || time_dim % 2 != 0 {
            return Err(Error::Config(format!("time embedding dimension must be even and positive, got {time_dim}")));
        }
        if hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(Self { data_dim, time_dim, cond_dim, hidden })
    }

    /// The lab's fixed architecture for a given condition width.
    pub fn standard(cond_dim: usize) -> Self {
        Self { data_dim: DATA_DIM, time_dim: TIME_EMBED_DIM, cond_dim, hidden: HIDDEN_WIDTHS.to_vec() }
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + self.time_dim + self.cond_dim
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim());
        widths.extend_from_slice(&self.hidden);
        widths.push(self.data_dim);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = offset..offset + fan_in * fan_out;
                let bias = weights.end..weights.end + fan_out;
                offset = bias.end;
                LayerShape { fan_in, fan_out, weights, bias }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map_or(0, |l| l.bias.end)
    }
}

/// Flat, finite parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "parameter vector", index });
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `self + scale * other`, elementwise.
    pub fn scaled_add(&self, scale: f64, other: &ParamVector) -> Result<ParamVector> {
        ensure_len("scaled_add", self.len(), other.len())?;
        ParamVector::new(self.0.iter().zip(&other.0).map(|(a, b)| a + scale * b).collect())
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

/// Euclidean distance between two parameter vectors.
pub fn param_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    ensure_len("param_distance", a.len(), b.len())?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Scratch buffers for one forward/backward pass.
#[derive(Clone, Debug)]
pub struct Workspace {
    // acts[0] is the network input, acts[l] the post-activation input of layer l.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Workspace {
    pub fn new(arch: &Architecture) -> Self {
        let layers = arch.layers();
        Self {
            acts: layers.iter().map(|l| vec![0.0; l.fan_in]).collect(),
            pre: layers.iter().map(|l| vec![0.0; l.fan_out]).collect(),
            delta: Vec::new(),
            delta_next: Vec::new(),
        }
    }

    /// Output of the last forward pass.
    pub fn output(&self) -> &[f64] {
        self.pre.last().map_or(&[], |v| v.as_slice())
    }
}

/// The conditional noise predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet {
    arch: Architecture,
    layers: Vec<LayerShape>,
    params: ParamVector,
}

impl DenoiserNet {
    pub fn new(arch: Architecture, params: ParamVector) -> Result<Self> {
        ensure_len("denoiser parameters", arch.param_count(), params.len())?;
        let layers = arch.layers();
        Ok(Self { arch, layers, params })
    }

    /// Scaled-uniform initialisation for hidden layers (variance `1 / fan_in`)
    /// and a zero output layer, so an untrained net predicts exactly zero.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = rng::stream(&[rng::domain::INIT, seed]);
        let layers = arch.layers();
        let mut values = vec![0.0; arch.param_count()];
        for layer in &layers[..layers.len() - 1] {
            let bound = (3.0 / layer.fan_in as f64).sqrt();
            for w in &mut values[layer.weights.clone()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Self { arch, layers, params: ParamVector(values) }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    /// Same architecture, different parameters.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        ensure_len("denoiser parameters", self.params.len(), params.len())?;
        Ok(Self { arch: self.arch.clone(), layers: self.layers.clone(), params })
    }

    pub fn workspace(&self) -> Workspace {
        Workspace::new(&self.arch)
    }

    fn check_inputs(&self, z: &[f64], cond: &[f64]) -> Result<()> {
        ensure_len("denoiser input z_t", self.arch.data_dim, z.len())?;
        ensure_len("denoiser condition", self.arch.cond_dim, cond.len())
    }

    /// Predicted noise for `z` at timestep `t` under condition embedding `cond`.
    pub fn forward(&self, z: &[f64], t: usize, cond: &[f64]) -> Result<Vec<f64>> {
        let mut ws = self.workspace();
        Ok(self.forward_with(&mut ws, z, t, cond)?.to_vec())
    }

    /// Forward pass that keeps the intermediate values in `ws` for a later
    /// [`DenoiserNet::backward`].
    pub fn forward_with<'w>(&self, ws: &'w mut Workspace, z: &[f64], t: usize, cond: &[f64]) -> Result<&'w [f64]> {
        self.check_inputs(z, cond)?;
        let d = self.arch.data_dim;
        let input = &mut ws.acts[0];
        input[..d].copy_from_slice(z);
        time_embed_into(t, &mut input[d..d + self.arch.time_dim])?;
        input[d + self.arch.time_dim..].copy_from_slice(cond);

        let p = self.params.as_slice();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &p[layer.weights.clone()];
            let b = &p[layer.bias.clone()];
            {
                let (x, pre) = (&ws.acts[l], &mut ws.pre[l]);
                for (o, out) in pre.iter_mut().enumerate() {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    *out = b[o] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
                }
            }
            if l < last {
                let (pre, next) = (&ws.pre[l], &mut ws.acts[l + 1]);
                for (a, &h) in next.iter_mut().zip(pre) {
                    *a = silu(h);
                }
            }
        }
        Ok(ws.output())
    }

    /// Accumulates `d(out_grad . output) / d(params)` into `grad`, using the
    /// intermediates of the last forward pass stored in `ws`.
    pub fn backward(&self, ws: &mut Workspace, out_grad: &[f64], grad: &mut [f64]) -> Result<()> {
        ensure_len("output gradient", self.arch.data_dim, out_grad.len())?;
        ensure_len("gradient buffer", self.params.len(), grad.len())?;
        let p = self.params.as_slice();
        ws.delta.clear();
        ws.delta.extend_from_slice(out_grad);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &ws.acts[l];
            let (gw, gb) = grad[layer.weights.start..layer.bias.end].split_at_mut(layer.fan_in * layer.fan_out);
            for (o, &dl) in ws.delta.iter().enumerate() {
                gb[o] += dl;
                for (g, xi) in gw[o * layer.fan_in..(o + 1) * layer.fan_in].iter_mut().zip(x) {
                    *g += dl * xi;
                }
            }
            if l == 0 {
                break;
            }
            let w = &p[layer.weights.clone()];
            ws.delta_next.clear();
            ws.delta_next.resize(layer.fan_in, 0.0);
            for (o, &dl) in ws.delta.iter().enumerate() {
                for (dn, wi) in ws.delta_next.iter_mut().zip(&w[o * layer.fan_in..(o + 1) * layer.fan_in]) {
                    *dn += dl * wi;
                }
            }
            for (dn, &h) in ws.delta_next.iter_mut().zip(&ws.pre[l - 1]) {
                *dn *= silu_grad(h);
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_next);
        }
        Ok(())
    }
}

/// One regression example: predict `target` from `(z_t, t, cond)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub z_t: Vec<f64>,
    pub t: usize,
    pub cond: Vec<f64>,
    pub target: Vec<f64>,
}

/// Mean over the batch of `||target - net(z_t, t, cond)||^2`, with its exact
/// gradient with respect to every parameter.
pub fn loss_and_grad(net: &DenoiserNet, batch: &[TrainExample]) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Usage("loss_and_grad needs a non-empty batch".into()));
    }
    let d = net.arch.data_dim;
    let scale = 1.0 / batch.len() as f64;
    let mut ws = net.workspace();
    let mut grad = vec![0.0; net.params.len()];
    let mut out_grad = vec![0.0; d];
    let mut loss = 0.0;
    for ex in batch {
        ensure_len("regression target", d, ex.target.len())?;
        let out = net.forward_with(&mut ws, &ex.z_t, ex.t, &ex.cond)?;
        for k in 0..d {
            let r = out[k] - ex.target[k];
            loss += r * r * scale;
            out_grad[k] = 2.0 * r * scale;
        }
        net.backward(&mut ws, &out_grad, &mut grad)?;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "batch loss", index: 0 });
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { context: "loss gradient", index });
    }
    Ok((loss, ParamVector(grad)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0, config }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// In-place update used by the training loops.
    pub fn update(&mut self, params: &mut ParamVector, grads: &ParamVector) -> Result<()> {
        ensure_len("adam parameters", self.m.len(), params.len())?;
        ensure_len("adam gradient", self.m.len(), grads.len())?;
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for (((p, &g), m), v) in params.0.iter_mut().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        if let Some(index) = params.0.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { context: "adam update", index });
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_step(params: &ParamVector, grads: &ParamVector, state: &AdamState) -> Result<(ParamVector, AdamState)> {
    let mut params = params.clone();
    let mut state = state.clone();
    state.update(&mut params, grads)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Architecture {
        Architecture::new(2, 4, 3, vec![5, 4]).unwrap()
    }

    fn random_net(arch: Architecture, seed: u64) -> DenoiserNet {
        let mut r = rng::stream(&[seed]);
        let n = arch.param_count();
        let values = (0..n).map(|_| r.random_range(-0.8..0.8)).collect();
        DenoiserNet::new(arch, ParamVector::new(values).unwrap()).unwrap()
    }

    #[test]
    fn time_embed_at_zero() {
        assert_eq!(time_embed(0, 4).unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn time_embed_rejects_odd_dim() {
        assert!(matches!(time_embed(3, 5), Err(Error::Config(_))));
        assert!(matches!(time_embed(3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn time_embed_bounded() {
        for t in [0, 1, 17, 120, 200] {
            assert!(time_embed(t, 4).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn layout_is_contiguous() {
        let arch = Architecture::standard(17);
        let layers = arch.layers();
        assert_eq!(layers.len(), 3);
        assert_eq!(layers[0].weights.start, 0);
        for w in layers.windows(2) {
            assert_eq!(w[0].bias.end, w[1].weights.start);
        }
        assert_eq!(arch.param_count(), 35 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
    }

    #[test]
    fn forward_checks_dimensions() {
        let net = random_net(small_arch(), 1);
        assert!(matches!(net.forward(&[0.0; 3], 1, &[0.0; 3]), Err(Error::Structural(_))));
        assert!(matches!(net.forward(&[0.0; 2], 1, &[0.0; 2]), Err(Error::Structural(_))));
    }

    #[test]
    fn zero_params_give_bias_path() {
        let arch = small_arch();
        let n = arch.param_count();
        let mut values = vec![0.0; n];
        let out_bias = arch.layers()[2].bias.clone();
        values[out_bias.start] = 0.25;
        values[out_bias.start + 1] = -1.5;
        let net = DenoiserNet::new(arch, ParamVector::new(values).unwrap()).unwrap();
        for z in [[0.0, 0.0], [3.0, -2.0], [100.0, 7.0]] {
            assert_eq!(net.forward(&z, 11, &[1.0, 0.0, 1.0]).unwrap(), vec![0.25, -1.5]);
        }
    }

    #[test]
    fn untrained_net_predicts_zero() {
        let net = DenoiserNet::init(Architecture::standard(5), 3);
        assert_eq!(net.forward(&[1.0, 2.0], 50, &[0.0, 1.0, 0.0, 0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn loss_zero_at_own_output() {
        let net = random_net(small_arch(), 4);
        let cond = vec![0.0, 1.0, 1.0];
        let z = vec![0.3, -0.7];
        let target = net.forward(&z, 9, &cond).unwrap();
        let (loss, grad) = loss_and_grad(&net, &[TrainExample { z_t: z, t: 9, cond, target }]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn doubling_residual_quadruples_loss() {
        let net = random_net(small_arch(), 5);
        let cond = vec![1.0, 0.0, 1.0];
        let z = vec![0.1, 0.2];
        let out = net.forward(&z, 4, &cond).unwrap();
        let residual = [0.4, -0.9];
        let ex = |s: f64| TrainExample {
            z_t: z.clone(),
            t: 4,
            cond: cond.clone(),
            target: vec![out[0] + s * residual[0], out[1] + s * residual[1]],
        };
        let (l1, _) = loss_and_grad(&net, &[ex(1.0)]).unwrap();
        let (l2, _) = loss_and_grad(&net, &[ex(2.0)]).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_usage_error() {
        let net = random_net(small_arch(), 6);
        assert!(matches!(loss_and_grad(&net, &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn nonfinite_input_reports_index() {
        let net = random_net(small_arch(), 6);
        let ex = TrainExample { z_t: vec![f64::NAN, 0.0], t: 1, cond: vec![0.0; 3], target: vec![0.0; 2] };
        assert!(matches!(loss_and_grad(&net, &[ex]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn adam_zero_gradient_from_fresh_state_is_identity() {
        let p = ParamVector::new(vec![1.0, -2.0, 3.5]).unwrap();
        let state = AdamState::new(3, AdamConfig::with_lr(0.1));
        let (q, s) = adam_step(&p, &ParamVector::zeros(3), &state).unwrap();
        assert_eq!(p, q);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        for g in [3.0, -0.02, 1e3] {
            let p = ParamVector::new(vec![0.5]).unwrap();
            let lr = 0.01;
            let state = AdamState::new(1, AdamConfig::with_lr(lr));
            let (q, _) = adam_step(&p, &ParamVector::new(vec![g]).unwrap(), &state).unwrap();
            let delta = q.as_slice()[0] - 0.5;
            assert!((delta.abs() - lr).abs() < lr * 1e-3, "g={g} delta={delta}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_length_mismatch() {
        let state = AdamState::new(2, AdamConfig::with_lr(0.1));
        let p = ParamVector::zeros(2);
        assert!(matches!(adam_step(&p, &ParamVector::zeros(3), &state), Err(Error::Structural(_))));
    }

    #[test]
    fn adam_counter_increments() {
        let mut state = AdamState::new(1, AdamConfig::with_lr(0.1));
        let mut p = ParamVector::new(vec![1.0]).unwrap();
        for k in 1..=5 {
            state.update(&mut p, &ParamVector::new(vec![0.3]).unwrap()).unwrap();
            assert_eq!(state.step_count(), k);
        }
    }

    #[test]
    fn distance_basics() {
        let a = ParamVector::new(vec![3.0, 4.0]).unwrap();
        let z = ParamVector::zeros(2);
        assert_eq!(param_distance(&a, &z).unwrap(), 5.0);
        assert_eq!(param_distance(&a, &a).unwrap(), 0.0);
        assert!(matches!(param_distance(&a, &ParamVector::zeros(3)), Err(Error::Structural(_))));
    }

    #[test]
    fn param_vector_rejects_nan() {
        assert!(matches!(ParamVector::new(vec![0.0, f64::INFINITY]), Err(Error::NonFinite { index: 1, .. })));
    }
}
