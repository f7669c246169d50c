//! The learnable map `G_θ(anchor, x_t, t)` and the assembled predictor
//! `g_θ = a_t x_t + b_t G_θ`.
//!
//! `G_θ` is a fully connected network whose input is
//! `[x_t ‖ anchor ‖ embed(t)]`. Gradients are computed by a hand-written
//! backward pass. The network is generic over the float type: training runs
//! in `f32` (the checkpoint format stores `f32`), gradient checks run in `f64`.

use std::fmt::Debug;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::Preconditioning;

/// Float types the network can run in.
pub trait Real: Float + LinalgScalar + ScalarOperand + std::ops::AddAssign + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn widen(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn widen(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn widen(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Relu,
    Tanh,
}

impl Activation {
    fn apply<F: Real>(self, x: F) -> F {
        match self {
            Activation::Silu => x / (F::one() + (-x).exp()),
            Activation::Relu => x.max(F::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation.
    fn derivative<F: Real>(self, x: F) -> F {
        match self {
            Activation::Silu => {
                let s = F::one() / (F::one() + (-x).exp());
                s * (F::one() + x * (F::one() - s))
            }
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                F::one() - t * t
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Data dimension `d`; both `x_t` and the anchor have `d` entries.
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
    /// Replace the anchor input with zeros (the anchor-free ablation arm).
    #[serde(default)]
    pub ignore_anchor: bool,
}

impl NetConfig {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>) -> Self {
        NetConfig {
            input_dim,
            hidden_sizes,
            time_embed_dim: 16,
            activation: Activation::Silu,
            ignore_anchor: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::arg("input_dim must be at least 1"));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::arg("hidden_sizes must be non-empty and positive"));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::arg("time_embed_dim must be even and at least 2"));
        }
        Ok(())
    }

    pub fn in_features(&self) -> usize {
        2 * self.input_dim + self.time_embed_dim
    }

    /// `(fan_in, fan_out)` for every layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.in_features()];
        widths.extend(&self.hidden_sizes);
        widths.push(self.input_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Sinusoidal features of `t` with frequencies log-spaced over `[1, 1000]`.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let frac = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = (frac * 1000f64.ln()).exp();
        out.push((freq * t).sin());
    }
    for i in 0..half {
        let frac = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = (frac * 1000f64.ln()).exp();
        out.push((freq * t).cos());
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<F> {
    /// `(fan_out, fan_in)`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

/// One array per weight matrix and bias vector, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<F> {
    pub layers: Vec<Linear<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn zeros(config: &NetConfig) -> Self {
        ParamSet {
            layers: config
                .layer_shapes()
                .into_iter()
                .map(|(fan_in, fan_out)| Linear {
                    weight: Array2::zeros((fan_out, fan_in)),
                    bias: Array1::zeros(fan_out),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Named tensors in a fixed order: `layer{i}.weight`, `layer{i}.bias`.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[F])> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("layer{i}.weight"),
                l.weight.shape().to_vec(),
                l.weight.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("layer{i}.bias"),
                l.bias.shape().to_vec(),
                l.bias.as_slice().expect("standard layout"),
            ));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn slices(&self) -> Vec<&[F]> {
        self.tensors().into_iter().map(|(_, _, s)| s).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len())
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<F> {
    pub config: NetConfig,
    pub weights: ParamSet<F>,
    pub step_count: u64,
}

/// Fan-in scaled uniform initialization; the output layer starts at zero so
/// that `G_θ ≡ 0` and `g_θ = a_t x_t` before training.
pub fn init_params<F: Real, R: Rng + ?Sized>(
    config: &NetConfig,
    rng: &mut R,
) -> Result<NetworkParams<F>> {
    config.validate()?;
    let mut weights = ParamSet::<F>::zeros(config);
    let last = weights.layers.len() - 1;
    for layer in &mut weights.layers[..last] {
        let fan_in = layer.weight.ncols();
        let bound = 1.0 / (fan_in as f64).sqrt();
        layer
            .weight
            .mapv_inplace(|_| F::of(rng.random_range(-bound..bound)));
        layer
            .bias
            .mapv_inplace(|_| F::of(rng.random_range(-bound..bound)));
    }
    Ok(NetworkParams {
        config: config.clone(),
        weights,
        step_count: 0,
    })
}

/// Activations kept from a forward pass for the backward pass.
struct ForwardCache<F> {
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<Array2<F>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<F>>,
}

impl<F: Real> NetworkParams<F> {
    /// Build the `(batch, in_features)` input matrix.
    pub fn assemble_inputs(
        &self,
        x_t: ArrayView2<F>,
        anchors: ArrayView2<F>,
        t_scaled: &[f64],
    ) -> Result<Array2<F>> {
        let cfg = &self.config;
        let n = x_t.nrows();
        if x_t.ncols() != cfg.input_dim
            || anchors.ncols() != cfg.input_dim
            || anchors.nrows() != n
            || t_scaled.len() != n
        {
            return Err(Error::arg(format!(
                "shape mismatch: x_t {:?}, anchors {:?}, {} times, input_dim {}",
                x_t.shape(),
                anchors.shape(),
                t_scaled.len(),
                cfg.input_dim
            )));
        }
        let d = cfg.input_dim;
        let mut input = Array2::<F>::zeros((n, cfg.in_features()));
        input.slice_mut(s![.., ..d]).assign(&x_t);
        if !cfg.ignore_anchor {
            input.slice_mut(s![.., d..2 * d]).assign(&anchors);
        }
        for (i, &t) in t_scaled.iter().enumerate() {
            for (j, e) in time_embedding(t, cfg.time_embed_dim).into_iter().enumerate() {
                input[[i, 2 * d + j]] = F::of(e);
            }
        }
        Ok(input)
    }

    fn forward_cached(&self, input: Array2<F>) -> (Array2<F>, ForwardCache<F>) {
        let act = self.config.activation;
        let layers = &self.weights.layers;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len() - 1);
        let mut h = input;
        for (i, layer) in layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            inputs.push(h);
            if i + 1 == layers.len() {
                return (z, ForwardCache { inputs, pre });
            }
            h = z.mapv(|v| act.apply(v));
            pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    /// `G_θ` on a prepared input matrix.
    pub fn forward_inputs(&self, input: Array2<F>) -> Array2<F> {
        self.forward_cached(input).0
    }

    /// `G_θ` on a batch.
    pub fn forward_batch(
        &self,
        x_t: ArrayView2<F>,
        anchors: ArrayView2<F>,
        t_scaled: &[f64],
    ) -> Result<Array2<F>> {
        let input = self.assemble_inputs(x_t, anchors, t_scaled)?;
        Ok(self.forward_inputs(input))
    }

    /// `G_θ(anchor, x_t, t)` for one example.
    pub fn g_network(&self, anchor: &[F], x_t: &[F], t_scaled: f64) -> Result<Vec<F>> {
        let d = self.config.input_dim;
        if anchor.len() != d || x_t.len() != d {
            return Err(Error::arg(format!(
                "expected vectors of length {d}, got anchor {} and x_t {}",
                anchor.len(),
                x_t.len()
            )));
        }
        let xv = ArrayView2::from_shape((1, d), x_t).expect("length checked");
        let av = ArrayView2::from_shape((1, d), anchor).expect("length checked");
        Ok(self.forward_batch(xv, av, &[t_scaled])?.into_raw_vec_and_offset().0)
    }

    /// `g_θ = a x_t + b G_θ(anchor, x_t, t)` for one example.
    pub fn predict(
        &self,
        anchor: &[F],
        x_t: &[F],
        t_scaled: f64,
        coeffs: Preconditioning,
    ) -> Result<Vec<F>> {
        let out = self.g_network(anchor, x_t, t_scaled)?;
        let (a, b) = (F::of(coeffs.a), F::of(coeffs.b));
        Ok(x_t.iter().zip(out).map(|(&x, g)| a * x + b * g).collect())
    }

    /// `g_θ` on a batch with per-row coefficients.
    pub fn predict_batch(
        &self,
        x_t: ArrayView2<F>,
        anchors: ArrayView2<F>,
        t_scaled: &[f64],
        coeffs: &[Preconditioning],
    ) -> Result<Array2<F>> {
        if coeffs.len() != x_t.nrows() {
            return Err(Error::arg("one preconditioning pair per row required"));
        }
        let g = self.forward_batch(x_t, anchors, t_scaled)?;
        Ok(combine(x_t, g, coeffs))
    }

    /// Mean Pseudo-Huber loss of `g_θ` against the targets, with gradients.
    ///
    /// Anchors enter as constants: no gradient is taken with respect to them.
    pub fn loss_and_grad(&self, batch: &Batch<F>, c: f64) -> Result<LossGrad<F>> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::arg("empty batch"));
        }
        if !(c > 0.0) {
            return Err(Error::arg("Pseudo-Huber c must be positive"));
        }
        if batch.target.shape() != batch.x_t.shape() {
            return Err(Error::arg("targets and inputs differ in shape"));
        }
        let input = self.assemble_inputs(batch.x_t.view(), batch.anchors.view(), &batch.t_scaled)?;
        let (g_out, cache) = self.forward_cached(input);
        let prediction = combine(batch.x_t.view(), g_out, &batch.coeffs);

        let inv_n = 1.0 / n as f64;
        let mut total = 0.0f64;
        let mut d_out = Array2::<F>::zeros(prediction.raw_dim());
        for i in 0..n {
            let err: Vec<f64> = prediction
                .row(i)
                .iter()
                .zip(batch.target.row(i))
                .map(|(p, t)| p.widen() - t.widen())
                .collect();
            let sq: f64 = err.iter().map(|e| e * e).sum();
            let root = (sq + c * c).sqrt();
            total += sq / (root + c);
            // d loss / d G = b * e / root / n
            let scale = batch.coeffs[i].b / root * inv_n;
            for (j, e) in err.iter().enumerate() {
                d_out[[i, j]] = F::of(scale * e);
            }
        }
        let loss = total * inv_n;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }
        let grads = self.backward(cache, d_out);
        Ok(LossGrad {
            loss,
            grads,
            prediction,
        })
    }

    fn backward(&self, cache: ForwardCache<F>, mut delta: Array2<F>) -> ParamSet<F> {
        let act = self.config.activation;
        let layers = &self.weights.layers;
        let mut grads: Vec<Linear<F>> = Vec::with_capacity(layers.len());
        for i in (0..layers.len()).rev() {
            let weight_grad = delta.t().dot(&cache.inputs[i]);
            let bias_grad = delta.sum_axis(Axis(0));
            grads.push(Linear {
                weight: weight_grad,
                bias: bias_grad,
            });
            if i == 0 {
                break;
            }
            let mut upstream = delta.dot(&layers[i].weight);
            upstream.zip_mut_with(&cache.pre[i - 1], |g, &z| *g = *g * act.derivative(z));
            delta = upstream;
        }
        grads.reverse();
        ParamSet { layers: grads }
    }
}

fn combine<F: Real>(x_t: ArrayView2<F>, mut g: Array2<F>, coeffs: &[Preconditioning]) -> Array2<F> {
    for (i, (mut row, c)) in g.rows_mut().into_iter().zip(coeffs).enumerate() {
        let (a, b) = (F::of(c.a), F::of(c.b));
        for (j, v) in row.iter_mut().enumerate() {
            *v = a * x_t[[i, j]] + b * *v;
        }
    }
    g
}

/// A training batch in network precision.
#[derive(Clone, Debug)]
pub struct Batch<F> {
    pub anchors: Array2<F>,
    pub x_t: Array2<F>,
    pub t_scaled: Vec<f64>,
    pub coeffs: Vec<Preconditioning>,
    pub target: Array2<F>,
}

impl<F: Real> Batch<F> {
    pub fn len(&self) -> usize {
        self.x_t.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Build a batch from `(anchor, x_t, t_scaled, coeffs, target)` rows.
    pub fn from_rows(rows: &[(&[f64], &[f64], f64, Preconditioning, &[f64])]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::arg("empty batch"));
        }
        let d = rows[0].1.len();
        let mut anchors = Array2::zeros((n, d));
        let mut x_t = Array2::zeros((n, d));
        let mut target = Array2::zeros((n, d));
        let mut t_scaled = Vec::with_capacity(n);
        let mut coeffs = Vec::with_capacity(n);
        for (i, (a, x, t, c, y)) in rows.iter().enumerate() {
            if a.len() != d || x.len() != d || y.len() != d {
                return Err(Error::arg("inconsistent row dimensions in batch"));
            }
            for j in 0..d {
                anchors[[i, j]] = F::of(a[j]);
                x_t[[i, j]] = F::of(x[j]);
                target[[i, j]] = F::of(y[j]);
            }
            t_scaled.push(*t);
            coeffs.push(*c);
        }
        Ok(Batch {
            anchors,
            x_t,
            t_scaled,
            coeffs,
            target,
        })
    }
}

pub struct LossGrad<F> {
    pub loss: f64,
    pub grads: ParamSet<F>,
    /// `g_θ` for every row; the trainer writes these back to the buffer.
    pub prediction: Array2<F>,
}

/// `√(‖x − y‖² + c²) − c`, evaluated without cancellation for small errors.
pub fn pseudo_huber(x: &[f64], y: &[f64], c: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    sq / ((sq + c * c).sqrt() + c)
}
