//! Stacked LSTM with variational dropout, mean pooling over the top layer's
//! hidden sequence and an affine head.
//!
//! Gate blocks inside `W`, `U` and `b` are ordered forget, input, output,
//! candidate. Steps within a sequence are evaluated strictly in order; the
//! only public single-step entry point is [`lstm_cell_step`], which needs the
//! previous state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{axpy, dot, Gradients, Matrix, Tensor};
use crate::train::Trainable;

pub const N_GATES: usize = 4;

/// Weights of one LSTM layer. `w` is `4h × in`, `u` is `4h × h`, `b` is `4h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl LstmParams {
    pub fn zeros(n_inputs: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(&[N_GATES * hidden, n_inputs]),
            u: Tensor::zeros(&[N_GATES * hidden, hidden]),
            b: Tensor::zeros(&[N_GATES * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.shape[1]
    }

    pub fn n_inputs(&self) -> usize {
        self.w.shape[1]
    }

    pub fn n_parameters(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }

    fn validate(&self) -> Result<()> {
        let h = self.u.shape.get(1).copied().unwrap_or(0);
        let ok = self.w.shape.len() == 2
            && self.u.shape == [N_GATES * h, h]
            && self.w.shape[0] == N_GATES * h
            && self.b.shape == [N_GATES * h];
        if !ok || h == 0 {
            return Err(Error::Shape(format!(
                "inconsistent LSTM shapes W {:?}, U {:?}, b {:?}",
                self.w.shape, self.u.shape, self.b.shape
            )));
        }
        Ok(())
    }

    /// Gate pre-activations `W x + U h + b`.
    fn preactivations(&self, x: &[f64], h: &[f64], z: &mut [f64]) {
        let (n_in, hid) = (self.n_inputs(), self.hidden());
        for (r, zr) in z.iter_mut().enumerate() {
            *zr = self.b.data[r]
                + dot(&self.w.data[r * n_in..(r + 1) * n_in], x)
                + dot(&self.u.data[r * hid..(r + 1) * hid], h);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellActivations {
    pub gate: Activation,
    pub cell: Activation,
    pub hidden: Activation,
}

impl Default for CellActivations {
    fn default() -> Self {
        Self {
            gate: Activation::Logistic,
            cell: Activation::Tanh,
            hidden: Activation::Tanh,
        }
    }
}

/// One cell update from `(h_{t-1}, c_{t-1})` and `x_t`.
pub fn lstm_cell_step(params: &LstmParams, x: &[f64], state: &LstmState, act: CellActivations) -> Result<LstmState> {
    params.validate()?;
    let h = params.hidden();
    if x.len() != params.n_inputs() || state.h.len() != h || state.c.len() != h {
        return Err(Error::Shape(format!(
            "cell expects input {} and state {h}, got input {}, h {}, c {}",
            params.n_inputs(),
            x.len(),
            state.h.len(),
            state.c.len()
        )));
    }
    let mut z = vec![0.0; N_GATES * h];
    params.preactivations(x, &state.h, &mut z);
    let mut next = LstmState::zeros(h);
    for j in 0..h {
        let f = act.gate.apply(z[j]);
        let i = act.gate.apply(z[h + j]);
        let o = act.gate.apply(z[2 * h + j]);
        let g = act.cell.apply(z[3 * h + j]);
        next.c[j] = f * state.c[j] + i * g;
        next.h[j] = o * act.hidden.apply(next.c[j]);
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnConfig {
    /// Hidden units per layer.
    pub neurons: Vec<usize>,
    /// Input dropout rate per layer.
    pub dropout: Vec<f64>,
    /// Recurrent dropout rate per layer.
    pub recurrent_dropout: Vec<f64>,
    pub seq_len: usize,
    pub n_inputs: usize,
    pub n_outputs: usize,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            neurons: vec![22, 72],
            dropout: vec![0.0, 0.1],
            recurrent_dropout: vec![0.4, 0.1],
            seq_len: 100,
            n_inputs: 27,
            n_outputs: 3,
        }
    }
}

impl RnnConfig {
    pub fn n_layers(&self) -> usize {
        self.neurons.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_layers();
        if n == 0 {
            return Err(Error::Config("RNN needs at least one layer".into()));
        }
        if self.dropout.len() != n || self.recurrent_dropout.len() != n {
            return Err(Error::Config(format!(
                "per-layer lists must all have {n} entries (dropout {}, recurrent_dropout {})",
                self.dropout.len(),
                self.recurrent_dropout.len()
            )));
        }
        if self.neurons.contains(&0) {
            return Err(Error::Config("every layer needs at least one neuron".into()));
        }
        if self.dropout.iter().chain(&self.recurrent_dropout).any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        if self.seq_len == 0 || self.n_inputs == 0 || self.n_outputs == 0 {
            return Err(Error::Config("seq_len, n_inputs and n_outputs must be ≥ 1".into()));
        }
        Ok(())
    }

    fn in_size(&self, layer: usize) -> usize {
        if layer == 0 {
            self.n_inputs
        } else {
            self.neurons[layer - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    pub config: RnnConfig,
    pub layers: Vec<LstmParams>,
    /// `n_outputs × last_hidden`.
    pub head_weight: Tensor,
    pub head_bias: Tensor,
    generation: u64,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    input_mask: Option<Vec<f64>>,
    recurrent_mask: Option<Vec<f64>>,
    /// Per step: f, i, o, g (post-activation), `4h` each.
    gates: Vec<f64>,
    /// Cell states `c_1..c_T`.
    c: Vec<f64>,
    /// Hidden states `h_1..h_T`.
    h: Vec<f64>,
}

#[derive(Debug, Clone)]
struct SampleTrace {
    /// Raw (unmasked) input sequence of layer 0.
    input: Vec<f64>,
    layers: Vec<LayerTrace>,
    pooled: Vec<f64>,
}

/// Intermediate values of a forward pass, consumed by [`RnnModel::backward`].
#[derive(Debug, Clone)]
pub struct RnnCache {
    generation: u64,
    samples: Vec<SampleTrace>,
}

impl RnnCache {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }
}

fn dropout_mask(n: usize, rate: f64, r: &mut rng::StreamRng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if r.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

fn masked(x: &[f64], mask: Option<&Vec<f64>>) -> Vec<f64> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    }
}

impl RnnModel {
    /// Uniform `±1/sqrt(fan_in)` weights, forget-gate bias 1, other biases 0.
    pub fn init(config: RnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.n_layers());
        for l in 0..config.n_layers() {
            let (n_in, h) = (config.in_size(l), config.neurons[l]);
            let mut r = rng::seeded(rng::derive(seed, l as u64));
            let mut p = LstmParams::zeros(n_in, h);
            let bw = 1.0 / (n_in as f64).sqrt();
            let bu = 1.0 / (h as f64).sqrt();
            p.w.data.iter_mut().for_each(|v| *v = r.random_range(-bw..bw));
            p.u.data.iter_mut().for_each(|v| *v = r.random_range(-bu..bu));
            p.b.data[..h].fill(1.0);
            layers.push(p);
        }
        let last = *config.neurons.last().expect("validated");
        let mut r = rng::seeded(rng::derive(seed, config.n_layers() as u64));
        let bound = 1.0 / (last as f64).sqrt();
        let mut head_weight = Tensor::zeros(&[config.n_outputs, last]);
        head_weight.data.iter_mut().for_each(|v| *v = r.random_range(-bound..bound));
        let head_bias = Tensor::zeros(&[config.n_outputs]);
        Ok(Self {
            config,
            layers,
            head_weight,
            head_bias,
            generation: 0,
        })
    }

    /// Rebuilds a model from tensors in canonical order (W, U, b per layer,
    /// then head weight and bias).
    pub fn from_tensors(config: RnnConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut model = Self::init(config, 0)?;
        let expected: Vec<Vec<usize>> = model.parameters().iter().map(|t| t.shape.clone()).collect();
        let got: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape.clone()).collect();
        if expected != got {
            return Err(Error::Shape(format!("RNN tensors {got:?} do not match config {expected:?}")));
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

    fn run_sample(&self, window: &[f64], mut dropout: Option<&mut rng::StreamRng>) -> (Vec<f64>, SampleTrace) {
        let cfg = &self.config;
        let t_len = cfg.seq_len;
        let mut layer_input = window.to_vec();
        let mut traces = Vec::with_capacity(cfg.n_layers());
        for (l, p) in self.layers.iter().enumerate() {
            let (n_in, h) = (cfg.in_size(l), cfg.neurons[l]);
            let (input_mask, recurrent_mask) = match dropout.as_deref_mut() {
                Some(r) => (
                    (cfg.dropout[l] > 0.0).then(|| dropout_mask(n_in, cfg.dropout[l], r)),
                    (cfg.recurrent_dropout[l] > 0.0).then(|| dropout_mask(h, cfg.recurrent_dropout[l], r)),
                ),
                None => (None, None),
            };
            let mut tr = LayerTrace {
                input_mask,
                recurrent_mask,
                gates: vec![0.0; t_len * N_GATES * h],
                c: vec![0.0; t_len * h],
                h: vec![0.0; t_len * h],
            };
            let zero = vec![0.0; h];
            let mut z = vec![0.0; N_GATES * h];
            for t in 0..t_len {
                let x = masked(&layer_input[t * n_in..(t + 1) * n_in], tr.input_mask.as_ref());
                let h_prev = if t == 0 { &zero[..] } else { &tr.h[(t - 1) * h..t * h] };
                let h_prev = masked(h_prev, tr.recurrent_mask.as_ref());
                p.preactivations(&x, &h_prev, &mut z);
                for j in 0..h {
                    let f = Activation::Logistic.apply(z[j]);
                    let i = Activation::Logistic.apply(z[h + j]);
                    let o = Activation::Logistic.apply(z[2 * h + j]);
                    let g = z[3 * h + j].tanh();
                    let c_prev = if t == 0 { 0.0 } else { tr.c[(t - 1) * h + j] };
                    let c = f * c_prev + i * g;
                    let base = t * N_GATES * h;
                    tr.gates[base + j] = f;
                    tr.gates[base + h + j] = i;
                    tr.gates[base + 2 * h + j] = o;
                    tr.gates[base + 3 * h + j] = g;
                    tr.c[t * h + j] = c;
                    tr.h[t * h + j] = o * c.tanh();
                }
            }
            layer_input = tr.h.clone();
            traces.push(tr);
        }
        let last = *cfg.neurons.last().expect("validated");
        let mut pooled = vec![0.0; last];
        for row in layer_input.chunks_exact(last) {
            axpy(1.0, row, &mut pooled);
        }
        pooled.iter_mut().for_each(|v| *v /= t_len as f64);
        let pred = (0..cfg.n_outputs)
            .map(|k| self.head_bias.data[k] + dot(&self.head_weight.data[k * last..(k + 1) * last], &pooled))
            .collect();
        (
            pred,
            SampleTrace {
                input: window.to_vec(),
                layers: traces,
                pooled,
            },
        )
    }

    /// Forward pass over a batch of windows. With `training` set, one input
    /// and one recurrent dropout mask per layer and sequence are drawn from
    /// `dropout_seed`.
    pub fn forward(&self, windows: &[&[f64]], training: bool, dropout_seed: u64) -> Result<(Matrix, RnnCache)> {
        windows.iter().try_for_each(|w| self.check_window(w))?;
        let mut preds = Matrix::zeros(windows.len(), self.config.n_outputs);
        let mut samples = Vec::with_capacity(windows.len());
        for (b, w) in windows.iter().enumerate() {
            let mut r = rng::seeded(rng::derive(dropout_seed, b as u64));
            let (p, trace) = self.run_sample(w, training.then_some(&mut r));
            preds.row_mut(b).copy_from_slice(&p);
            samples.push(trace);
        }
        Ok((
            preds,
            RnnCache {
                generation: self.generation,
                samples,
            },
        ))
    }

    pub fn predict(&self, windows: &[&[f64]]) -> Result<Matrix> {
        windows.iter().try_for_each(|w| self.check_window(w))?;
        let mut preds = Matrix::zeros(windows.len(), self.config.n_outputs);
        for (b, w) in windows.iter().enumerate() {
            let (p, _) = self.run_sample(w, None);
            preds.row_mut(b).copy_from_slice(&p);
        }
        Ok(preds)
    }

    /// Hidden-state sequence of every layer for one window (inference mode).
    pub fn hidden_sequences(&self, window: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_window(window)?;
        let (_, trace) = self.run_sample(window, None);
        Ok(trace.layers.into_iter().map(|l| l.h).collect())
    }

    /// Gradients of the batch-mean loss given per-sample upstream gradients
    /// `d loss_b / d prediction_b` (`batch × n_outputs`).
    pub fn backward(&self, cache: &RnnCache, upstream: &Matrix) -> Result<Gradients> {
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
        let t_len = cfg.seq_len;
        let last = *cfg.neurons.last().expect("validated");
        let mut grads: Vec<LstmParams> = self.layers.iter().map(|p| LstmParams::zeros(p.n_inputs(), p.hidden())).collect();
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
            let scale = 1.0 / t_len as f64;
            let mut d_hseq: Vec<f64> = (0..t_len).flat_map(|_| d_pooled.iter().map(|v| v * scale)).collect();

            for l in (0..cfg.n_layers()).rev() {
                let p = &self.layers[l];
                let gp = &mut grads[l];
                let tr = &trace.layers[l];
                let (n_in, h) = (cfg.in_size(l), cfg.neurons[l]);
                let input: &[f64] = if l == 0 { &trace.input } else { &trace.layers[l - 1].h };
                let mut d_input = if l > 0 { vec![0.0; t_len * n_in] } else { Vec::new() };
                let mut dh_next = vec![0.0; h];
                let mut dc_next = vec![0.0; h];
                let mut dz = vec![0.0; N_GATES * h];
                let zero = vec![0.0; h];
                for t in (0..t_len).rev() {
                    let base = t * N_GATES * h;
                    for j in 0..h {
                        let f = tr.gates[base + j];
                        let i = tr.gates[base + h + j];
                        let o = tr.gates[base + 2 * h + j];
                        let gg = tr.gates[base + 3 * h + j];
                        let c = tr.c[t * h + j];
                        let c_prev = if t == 0 { 0.0 } else { tr.c[(t - 1) * h + j] };
                        let tc = c.tanh();
                        let dh = d_hseq[t * h + j] + dh_next[j];
                        let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                        dz[j] = dc * c_prev * f * (1.0 - f);
                        dz[h + j] = dc * gg * i * (1.0 - i);
                        dz[2 * h + j] = dh * tc * o * (1.0 - o);
                        dz[3 * h + j] = dc * i * (1.0 - gg * gg);
                        dc_next[j] = dc * f;
                    }
                    let x = masked(&input[t * n_in..(t + 1) * n_in], tr.input_mask.as_ref());
                    let h_prev = if t == 0 { &zero[..] } else { &tr.h[(t - 1) * h..t * h] };
                    let h_prev = masked(h_prev, tr.recurrent_mask.as_ref());
                    axpy(1.0, &dz, &mut gp.b.data);
                    let mut dx = vec![0.0; n_in];
                    dh_next.fill(0.0);
                    for (r, &d) in dz.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        axpy(d, &x, &mut gp.w.data[r * n_in..(r + 1) * n_in]);
                        axpy(d, &h_prev, &mut gp.u.data[r * h..(r + 1) * h]);
                        if l > 0 {
                            axpy(d, &p.w.data[r * n_in..(r + 1) * n_in], &mut dx);
                        }
                        if t > 0 {
                            axpy(d, &p.u.data[r * h..(r + 1) * h], &mut dh_next);
                        }
                    }
                    if let Some(m) = &tr.recurrent_mask {
                        dh_next.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
                    }
                    if l > 0 {
                        if let Some(m) = &tr.input_mask {
                            dx.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
                        }
                        d_input[t * n_in..(t + 1) * n_in].copy_from_slice(&dx);
                    }
                }
                if l > 0 {
                    d_hseq = d_input;
                }
            }
        }

        let mut tensors = Vec::with_capacity(3 * cfg.n_layers() + 2);
        for gp in grads {
            tensors.push(gp.w);
            tensors.push(gp.u);
            tensors.push(gp.b);
        }
        tensors.push(Tensor::new(vec![cfg.n_outputs, last], d_head_w)?);
        tensors.push(Tensor::new(vec![cfg.n_outputs], d_head_b)?);
        Ok(Gradients { tensors })
    }
}

impl Trainable for RnnModel {
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
        let mut v: Vec<&Tensor> = Vec::with_capacity(3 * self.layers.len() + 2);
        for p in &self.layers {
            v.extend([&p.w, &p.u, &p.b]);
        }
        v.push(&self.head_weight);
        v.push(&self.head_bias);
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.generation += 1;
        let mut v: Vec<&mut Tensor> = Vec::with_capacity(3 * self.layers.len() + 2);
        for p in &mut self.layers {
            v.extend([&mut p.w, &mut p.u, &mut p.b]);
        }
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v
    }
}
