//! Temporal CNN: stacked causal dilated 1D convolutions, global average
//! pooling over time and an affine head.
//!
//! Window layout is time-major (`seq_len × channels`, row-major). Kernels are
//! stored `out × in × width`; tap `k` of a width-`w` kernel with dilation `d`
//! reads the input `(w − 1 − k) · d` steps in the past, so the last tap sees
//! the current step and nothing reads the future.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{axpy, dot, Gradients, Matrix, Tensor};
use crate::train::Trainable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Filters per layer.
    pub n_filter: Vec<usize>,
    /// Kernel width per layer.
    pub s_filter: Vec<usize>,
    /// Dilation per layer.
    pub dilation: Vec<usize>,
    /// Dropout rate applied after each layer's activation during training.
    pub dropout: Vec<f64>,
    pub seq_len: usize,
    pub n_inputs: usize,
    pub n_outputs: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl Default for CnnConfig {
    /// Three layers with (125, 5, 125) filters, width 2 and dilations (3, 1, 1)
    /// over 100-step windows of 27 features.
    fn default() -> Self {
        Self {
            n_filter: vec![125, 5, 125],
            s_filter: vec![2, 2, 2],
            dilation: vec![3, 1, 1],
            dropout: vec![0.0; 3],
            seq_len: 100,
            n_inputs: 27,
            n_outputs: 3,
            activation: Activation::Relu,
        }
    }
}

impl CnnConfig {
    pub fn n_layers(&self) -> usize {
        self.n_filter.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_layers();
        if n == 0 {
            return Err(Error::Config("CNN needs at least one layer".into()));
        }
        if self.s_filter.len() != n || self.dilation.len() != n || self.dropout.len() != n {
            return Err(Error::Config(format!(
                "per-layer lists must all have {n} entries (s_filter {}, dilation {}, dropout {})",
                self.s_filter.len(),
                self.dilation.len(),
                self.dropout.len()
            )));
        }
        if self.n_filter.contains(&0) || self.s_filter.contains(&0) || self.dilation.contains(&0) {
            return Err(Error::Config("filter counts, widths and dilations must be ≥ 1".into()));
        }
        if self.dropout.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        if self.seq_len == 0 || self.n_inputs == 0 || self.n_outputs == 0 {
            return Err(Error::Config("seq_len, n_inputs and n_outputs must be ≥ 1".into()));
        }
        let rf = receptive_field(self);
        if rf > self.seq_len {
            return Err(Error::Config(format!(
                "receptive field {rf} exceeds sequence length {}",
                self.seq_len
            )));
        }
        Ok(())
    }

    fn in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            self.n_inputs
        } else {
            self.n_filter[layer - 1]
        }
    }
}

/// Number of past samples (including the current one) that can influence an
/// output: `1 + Σ (width − 1) · dilation`.
pub fn receptive_field(config: &CnnConfig) -> usize {
    1 + config
        .s_filter
        .iter()
        .zip(&config.dilation)
        .map(|(w, d)| (w - 1) * d)
        .sum::<usize>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub config: CnnConfig,
    /// `out × in × width` per layer.
    pub kernels: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    /// `n_outputs × last_channels`.
    pub head_weight: Tensor,
    pub head_bias: Tensor,
    generation: u64,
}

/// Per-sample intermediate values recorded by a training forward pass.
#[derive(Debug, Clone)]
struct SampleTrace {
    /// Input of each layer (`seq_len × in`); entry `L` is the last layer's output.
    activations: Vec<Vec<f64>>,
    /// Pre-activation of each layer (`seq_len × out`).
    pre: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers per layer, if dropout was active.
    masks: Vec<Option<Vec<f64>>>,
    pooled: Vec<f64>,
}

/// Intermediate values of a forward pass, consumed by [`CnnModel::backward`].
#[derive(Debug, Clone)]
pub struct CnnCache {
    generation: u64,
    samples: Vec<SampleTrace>,
}

impl CnnCache {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }
}

impl CnnModel {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn init(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for l in 0..config.n_layers() {
            let (out, inp, w) = (config.n_filter[l], config.in_channels(l), config.s_filter[l]);
            let mut r = rng::seeded(rng::derive(seed, l as u64));
            kernels.push(uniform(&[out, inp, w], (inp * w) as f64, &mut r));
            biases.push(Tensor::zeros(&[out]));
        }
        let last = *config.n_filter.last().expect("validated non-empty");
        let mut r = rng::seeded(rng::derive(seed, config.n_layers() as u64));
        let head_weight = uniform(&[config.n_outputs, last], last as f64, &mut r);
        let head_bias = Tensor::zeros(&[config.n_outputs]);
        Ok(Self {
            config,
            kernels,
            biases,
            head_weight,
            head_bias,
            generation: 0,
        })
    }

    /// Rebuilds a model from tensors in canonical order (kernel, bias per
    /// layer, then head weight and bias).
    pub fn from_tensors(config: CnnConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut model = Self::init(config, 0)?;
        let expected: Vec<Vec<usize>> = model.parameters().iter().map(|t| t.shape.clone()).collect();
        let got: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape.clone()).collect();
        if expected != got {
            return Err(Error::Shape(format!("CNN tensors {got:?} do not match config {expected:?}")));
        }
        for (dst, src) in model.parameters_mut().into_iter().zip(tensors) {
            *dst = src;
        }
        model.generation = 0;
        Ok(model)
    }

    pub fn n_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Kernel of `layer` rearranged to `out × width × in` so each tap's
    /// weights are contiguous.
    fn tap_major(&self, layer: usize) -> Vec<f64> {
        let k = &self.kernels[layer];
        let (out, inp, w) = (k.shape[0], k.shape[1], k.shape[2]);
        let mut t = vec![0.0; out * inp * w];
        for o in 0..out {
            for c in 0..inp {
                for j in 0..w {
                    t[(o * w + j) * inp + c] = k.data[(o * inp + c) * w + j];
                }
            }
        }
        t
    }

    fn conv(&self, layer: usize, taps: &[f64], x: &[f64], pre: &mut [f64]) {
        let cfg = &self.config;
        let (out, inp, w, d) = (cfg.n_filter[layer], cfg.in_channels(layer), cfg.s_filter[layer], cfg.dilation[layer]);
        let bias = &self.biases[layer].data;
        for t in 0..cfg.seq_len {
            let row = &mut pre[t * out..(t + 1) * out];
            row.copy_from_slice(bias);
            for j in 0..w {
                let shift = (w - 1 - j) * d;
                if t < shift {
                    continue;
                }
                let xs = &x[(t - shift) * inp..(t - shift + 1) * inp];
                for (o, r) in row.iter_mut().enumerate() {
                    *r += dot(&taps[(o * w + j) * inp..(o * w + j + 1) * inp], xs);
                }
            }
        }
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        let expected = self.config.seq_len * self.config.n_inputs;
        if window.len() != expected {
            return Err(Error::Shape(format!(
                "window has {} values, expected {} × {}",
                window.len(),
                self.config.seq_len,
                self.config.n_inputs
            )));
        }
        Ok(())
    }

    fn run_sample(&self, taps: &[Vec<f64>], window: &[f64], dropout: Option<&mut rng::StreamRng>) -> (Vec<f64>, SampleTrace) {
        let cfg = &self.config;
        let mut r = dropout;
        let mut trace = SampleTrace {
            activations: vec![window.to_vec()],
            pre: Vec::with_capacity(cfg.n_layers()),
            masks: Vec::with_capacity(cfg.n_layers()),
            pooled: Vec::new(),
        };
        for l in 0..cfg.n_layers() {
            let out = cfg.n_filter[l];
            let mut pre = vec![0.0; cfg.seq_len * out];
            self.conv(l, &taps[l], &trace.activations[l], &mut pre);
            let mut act: Vec<f64> = pre.iter().map(|&v| cfg.activation.apply(v)).collect();
            let rate = cfg.dropout[l];
            let mask = match r.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let m: Vec<f64> = (0..act.len())
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    act.iter_mut().zip(&m).for_each(|(a, k)| *a *= k);
                    Some(m)
                }
                _ => None,
            };
            trace.pre.push(pre);
            trace.masks.push(mask);
            trace.activations.push(act);
        }
        let last = *cfg.n_filter.last().expect("validated");
        let top = trace.activations.last().expect("at least one layer");
        let mut pooled = vec![0.0; last];
        for row in top.chunks_exact(last) {
            axpy(1.0, row, &mut pooled);
        }
        pooled.iter_mut().for_each(|p| *p /= cfg.seq_len as f64);
        let pred: Vec<f64> = (0..cfg.n_outputs)
            .map(|k| self.head_bias.data[k] + dot(&self.head_weight.data[k * last..(k + 1) * last], &pooled))
            .collect();
        trace.pooled = pooled;
        (pred, trace)
    }

    /// Forward pass over a batch of windows. With `training` set, inverted
    /// dropout masks are drawn from `dropout_seed` (one stream per sample).
    /// Returns `batch × n_outputs` predictions in standardized target units.
    pub fn forward(&self, windows: &[&[f64]], training: bool, dropout_seed: u64) -> Result<(Matrix, CnnCache)> {
        windows.iter().try_for_each(|w| self.check_window(w))?;
        let taps: Vec<Vec<f64>> = (0..self.config.n_layers()).map(|l| self.tap_major(l)).collect();
        let mut preds = Matrix::zeros(windows.len(), self.config.n_outputs);
        let mut samples = Vec::with_capacity(windows.len());
        for (b, w) in windows.iter().enumerate() {
            let mut r = rng::seeded(rng::derive(dropout_seed, b as u64));
            let (p, trace) = self.run_sample(&taps, w, training.then_some(&mut r));
            preds.row_mut(b).copy_from_slice(&p);
            samples.push(trace);
        }
        Ok((
            preds,
            CnnCache {
                generation: self.generation,
                samples,
            },
        ))
    }

    /// Inference without dropout or cache.
    pub fn predict(&self, windows: &[&[f64]]) -> Result<Matrix> {
        windows.iter().try_for_each(|w| self.check_window(w))?;
        let taps: Vec<Vec<f64>> = (0..self.config.n_layers()).map(|l| self.tap_major(l)).collect();
        let mut preds = Matrix::zeros(windows.len(), self.config.n_outputs);
        for (b, w) in windows.iter().enumerate() {
            let (p, _) = self.run_sample(&taps, w, None);
            preds.row_mut(b).copy_from_slice(&p);
        }
        Ok(preds)
    }

    /// Pre-activations of every layer for one window (inference mode).
    pub fn layer_preactivations(&self, window: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_window(window)?;
        let taps: Vec<Vec<f64>> = (0..self.config.n_layers()).map(|l| self.tap_major(l)).collect();
        Ok(self.run_sample(&taps, window, None).1.pre)
    }

    /// Gradients of the batch-mean loss given per-sample upstream gradients
    /// `d loss_b / d prediction_b` (`batch × n_outputs`).
    pub fn backward(&self, cache: &CnnCache, upstream: &Matrix) -> Result<Gradients> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        let cfg = &self.config;
        if upstream.shape() != (cache.samples.len(), cfg.n_outputs) {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} vs batch {} × {}",
                upstream.shape(),
                cache.samples.len(),
                cfg.n_outputs
            )));
        }
        let n_layers = cfg.n_layers();
        let last = cfg.n_filter[n_layers - 1];
        let taps: Vec<Vec<f64>> = (0..n_layers).map(|l| self.tap_major(l)).collect();
        let mut d_taps: Vec<Vec<f64>> = taps.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut d_bias: Vec<Vec<f64>> = cfg.n_filter.iter().map(|&o| vec![0.0; o]).collect();
        let mut d_head_w = vec![0.0; cfg.n_outputs * last];
        let mut d_head_b = vec![0.0; cfg.n_outputs];
        let inv_batch = 1.0 / cache.samples.len().max(1) as f64;

        for (b, trace) in cache.samples.iter().enumerate() {
            let g = upstream.row(b);
            let mut d_pooled = vec![0.0; last];
            for k in 0..cfg.n_outputs {
                let gk = g[k] * inv_batch;
                d_head_b[k] += gk;
                axpy(gk, &trace.pooled, &mut d_head_w[k * last..(k + 1) * last]);
                axpy(gk, &self.head_weight.data[k * last..(k + 1) * last], &mut d_pooled);
            }
            let scale = 1.0 / cfg.seq_len as f64;
            let mut d_out: Vec<f64> = (0..cfg.seq_len).flat_map(|_| d_pooled.iter().map(|v| v * scale)).collect();
            for l in (0..n_layers).rev() {
                let (out, inp, w, d) = (cfg.n_filter[l], cfg.in_channels(l), cfg.s_filter[l], cfg.dilation[l]);
                let pre = &trace.pre[l];
                let post = &trace.activations[l + 1];
                let mut d_pre = d_out;
                for (i, dp) in d_pre.iter_mut().enumerate() {
                    let (mult, y) = match &trace.masks[l] {
                        Some(m) if m[i] == 0.0 => (0.0, 0.0),
                        Some(m) => (m[i], post[i] / m[i]),
                        None => (1.0, post[i]),
                    };
                    *dp *= mult * cfg.activation.derivative(pre[i], y);
                }
                let x = &trace.activations[l];
                let mut d_x = if l > 0 { vec![0.0; cfg.seq_len * inp] } else { Vec::new() };
                for t in 0..cfg.seq_len {
                    let dp_row = &d_pre[t * out..(t + 1) * out];
                    axpy(1.0, dp_row, &mut d_bias[l]);
                    for j in 0..w {
                        let shift = (w - 1 - j) * d;
                        if t < shift {
                            continue;
                        }
                        let src = (t - shift) * inp;
                        let xs = &x[src..src + inp];
                        for (o, &g) in dp_row.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let off = (o * w + j) * inp;
                            axpy(g, xs, &mut d_taps[l][off..off + inp]);
                            if l > 0 {
                                axpy(g, &taps[l][off..off + inp], &mut d_x[src..src + inp]);
                            }
                        }
                    }
                }
                d_out = d_x;
            }
        }

        let mut tensors = Vec::with_capacity(2 * n_layers + 2);
        for l in 0..n_layers {
            let (out, inp, w) = (cfg.n_filter[l], cfg.in_channels(l), cfg.s_filter[l]);
            let mut k = Tensor::zeros(&[out, inp, w]);
            for o in 0..out {
                for c in 0..inp {
                    for j in 0..w {
                        k.data[(o * inp + c) * w + j] = d_taps[l][(o * w + j) * inp + c];
                    }
                }
            }
            tensors.push(k);
            tensors.push(Tensor::new(vec![out], std::mem::take(&mut d_bias[l]))?);
        }
        tensors.push(Tensor::new(vec![cfg.n_outputs, last], d_head_w)?);
        tensors.push(Tensor::new(vec![cfg.n_outputs], d_head_b)?);
        Ok(Gradients { tensors })
    }
}

fn uniform(shape: &[usize], fan_in: f64, r: &mut rng::StreamRng) -> Tensor {
    let bound = 1.0 / fan_in.max(1.0).sqrt();
    let mut t = Tensor::zeros(shape);
    t.data.iter_mut().for_each(|v| *v = r.random_range(-bound..bound));
    t
}

impl Trainable for CnnModel {
    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    fn n_inputs(&self) -> usize {
        self.config.n_inputs
    }

    fn n_outputs(&self) -> usize {
        self.config.n_outputs
    }

    fn predict_batch(&self, windows: &[&[f64]]) -> Result<Matrix> {
        self.predict(windows)
    }

    fn loss_gradient(&self, windows: &[&[f64]], targets: &[&[f64]], seed: u64) -> Result<(f64, Gradients)> {
        let (pred, cache) = self.forward(windows, true, seed)?;
        let (loss, upstream) = crate::train::mse_upstream(&pred, targets)?;
        Ok((loss, self.backward(&cache, &upstream)?))
    }

    fn parameters(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::with_capacity(2 * self.kernels.len() + 2);
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            v.push(k);
            v.push(b);
        }
        v.push(&self.head_weight);
        v.push(&self.head_bias);
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.generation += 1;
        let mut v: Vec<&mut Tensor> = Vec::with_capacity(2 * self.kernels.len() + 2);
        for (k, b) in self.kernels.iter_mut().zip(self.biases.iter_mut()) {
            v.push(k);
            v.push(b);
        }
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v
    }
}
