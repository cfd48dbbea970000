//! Gradient-descent training loop with validation tracking, best-epoch
//! checkpointing and early stopping, plus hyperparameter search.

mod search;

pub use search::{search, Leaderboard, ParamSpec, Scale, SearchSpace, SearchStrategy, TrialResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Standardizer, WindowSet};
use crate::linmodel::{LinearConfig, LinearModel, SgdConfig};
use crate::metrics::{self, MetricsReport};
use crate::rng;
use crate::tensor::{Gradients, Matrix, Tensor};

/// A model the training loop can drive.
///
/// Windows are `seq_len × n_inputs` row-major slices; predictions and targets
/// are in standardized units.
pub trait Trainable: Clone {
    fn seq_len(&self) -> usize;
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;

    /// Inference (no dropout), `batch × n_outputs`.
    fn predict_batch(&self, windows: &[&[f64]]) -> Result<Matrix>;

    /// Training-mode loss of the batch and the gradient of the smooth part of
    /// the objective with respect to [`Trainable::parameters`].
    fn loss_gradient(&self, windows: &[&[f64]], targets: &[&[f64]], seed: u64) -> Result<(f64, Gradients)>;

    /// Parameter tensors in canonical order.
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Hook run after every parameter update (e.g. a proximal step).
    fn after_step(&mut self, _learning_rate: f64) {}
}

/// Mean squared error over the batch and outputs, and per-sample upstream
/// gradients scaled so that backward passes returning batch-mean gradients
/// produce the gradient of that MSE.
pub fn mse_upstream(pred: &Matrix, targets: &[&[f64]]) -> Result<(f64, Matrix)> {
    let (n, k) = pred.shape();
    if targets.len() != n || targets.iter().any(|t| t.len() != k) {
        return Err(Error::Shape(format!("{n} × {k} predictions vs {} targets", targets.len())));
    }
    let mut upstream = Matrix::zeros(n, k);
    let mut sum = 0.0;
    for (b, t) in targets.iter().enumerate() {
        for j in 0..k {
            let r = pred.get(b, j) - t[j];
            sum += r * r;
            upstream.set(b, j, 2.0 * r / k as f64);
        }
    }
    Ok((sum / (n * k).max(1) as f64, upstream))
}

/// One elastic-net linear model per target, stored as a weight matrix so the
/// generic loop can update it. Inputs are single-step windows.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    pub config: LinearConfig,
    /// `n_targets × n_features`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearRegressor {
    pub fn zeros(n_features: usize, n_targets: usize, config: LinearConfig) -> Self {
        Self {
            config,
            weight: Tensor::zeros(&[n_targets, n_features]),
            bias: Tensor::zeros(&[n_targets]),
        }
    }

    pub fn from_models(models: &[LinearModel]) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::InvalidInput("no linear models".into()))?;
        let p = first.n_features();
        if models.iter().any(|m| m.n_features() != p) {
            return Err(Error::Shape("linear models differ in feature count".into()));
        }
        Ok(Self {
            config: first.config.clone(),
            weight: Tensor::new(vec![models.len(), p], models.iter().flat_map(|m| m.beta.clone()).collect())?,
            bias: Tensor::new(vec![models.len()], models.iter().map(|m| m.beta0).collect())?,
        })
    }

    pub fn model(&self, target: usize) -> LinearModel {
        let p = self.weight.shape[1];
        LinearModel {
            beta: self.weight.data[target * p..(target + 1) * p].to_vec(),
            beta0: self.bias.data[target],
            config: self.config.clone(),
        }
    }

    pub fn models(&self) -> Vec<LinearModel> {
        (0..self.bias.len()).map(|k| self.model(k)).collect()
    }
}

impl Trainable for LinearRegressor {
    fn seq_len(&self) -> usize {
        1
    }

    fn n_inputs(&self) -> usize {
        self.weight.shape[1]
    }

    fn n_outputs(&self) -> usize {
        self.weight.shape[0]
    }

    fn predict_batch(&self, windows: &[&[f64]]) -> Result<Matrix> {
        let (k, p) = (self.n_outputs(), self.n_inputs());
        let mut out = Matrix::zeros(windows.len(), k);
        let models = self.models();
        for (b, w) in windows.iter().enumerate() {
            if w.len() != p {
                return Err(Error::Shape(format!("linear model expects {p} features, got {}", w.len())));
            }
            for (j, m) in models.iter().enumerate() {
                out.set(b, j, m.predict_row(w));
            }
        }
        Ok(out)
    }

    /// Mean over targets of the per-target mean loss (the squared loss is
    /// reported as MSE); the gradient includes the L2 part of the penalty.
    fn loss_gradient(&self, windows: &[&[f64]], targets: &[&[f64]], _seed: u64) -> Result<(f64, Gradients)> {
        let (k, p) = (self.n_outputs(), self.n_inputs());
        if windows.len() != targets.len() || windows.is_empty() {
            return Err(Error::Shape(format!("{} windows vs {} targets", windows.len(), targets.len())));
        }
        let mut gw = Tensor::zeros(&[k, p]);
        let mut gb = Tensor::zeros(&[k]);
        let inv = 1.0 / windows.len() as f64;
        let scale = if self.config.loss == crate::linmodel::LossKind::Squared { 2.0 } else { 1.0 };
        let mut loss = 0.0;
        for (j, m) in self.models().iter().enumerate() {
            let rows = windows.iter().zip(targets).map(|(w, t)| (*w, t[j]));
            let mut g0 = 0.0;
            let grad = &mut gw.data[j * p..(j + 1) * p];
            loss += scale * m.accumulate_gradient(rows, grad, &mut g0) * inv;
            let l2 = self.config.lambda2();
            for (g, b) in grad.iter_mut().zip(&m.beta) {
                *g = *g * inv + l2 * b;
            }
            gb.data[j] = g0 * inv;
        }
        Ok((loss / k as f64, Gradients { tensors: vec![gw, gb] }))
    }

    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn after_step(&mut self, learning_rate: f64) {
        let threshold = learning_rate * self.config.lambda1();
        if threshold > 0.0 {
            for b in &mut self.weight.data {
                *b = b.signum() * (b.abs() - threshold).max(0.0);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    /// Plain gradient step `θ ← θ − γ_t g`.
    Sgd,
    /// Adam with bias correction; `γ_t` scales the normalized step.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Step schedule, batch mode, epoch limit and shuffle seed.
    pub sgd: SgdConfig,
    pub optimizer: Optimizer,
    /// Epochs without an improvement larger than `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Seed for dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig::default(),
            optimizer: Optimizer::Sgd,
            patience: 10,
            min_delta: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.patience == 0 {
            return Err(Error::Config("patience must be ≥ 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config(format!("min_delta {} must be ≥ 0", self.min_delta)));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
                return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and epsilon > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training-mode batch loss over the epoch.
    pub train_loss: f64,
    /// MSE over the full validation set, inference mode, standardized units.
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_validation_loss(&self) -> f64 {
        self.epochs[self.best_epoch].validation_loss
    }
}

const EVAL_CHUNK: usize = 256;

/// Inference predictions for every window, `len × n_outputs`.
pub fn predict_windows<M: Trainable>(model: &M, windows: &WindowSet) -> Result<Matrix> {
    let ids: Vec<usize> = (0..windows.len()).collect();
    let mut out = Matrix::zeros(windows.len(), model.n_outputs());
    for chunk in ids.chunks(EVAL_CHUNK) {
        let (w, _) = windows.batch(chunk);
        let p = model.predict_batch(&w)?;
        for (r, &k) in chunk.iter().enumerate() {
            out.row_mut(k).copy_from_slice(p.row(r));
        }
    }
    Ok(out)
}

fn targets_of(windows: &WindowSet) -> Matrix {
    let mut y = Matrix::zeros(windows.len(), windows.n_targets());
    for k in 0..windows.len() {
        y.row_mut(k).copy_from_slice(windows.target(k));
    }
    y
}

/// MSE over all windows and targets in standardized units.
pub fn validation_mse<M: Trainable>(model: &M, windows: &WindowSet) -> Result<f64> {
    let pred = predict_windows(model, windows)?;
    let y = targets_of(windows);
    metrics::mse(y.as_slice(), pred.as_slice())
}

fn check_data<M: Trainable>(model: &M, set: &WindowSet, name: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidInput(format!("{name} set is empty")));
    }
    if set.window_shape() != (model.seq_len(), model.n_inputs()) || set.n_targets() != model.n_outputs() {
        return Err(Error::Shape(format!(
            "{name} windows {:?} → {} targets do not fit a model expecting ({}, {}) → {}",
            set.window_shape(),
            set.n_targets(),
            model.seq_len(),
            model.n_inputs(),
            model.n_outputs()
        )));
    }
    Ok(())
}

struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: i32,
}

fn apply_update<M: Trainable>(model: &mut M, grads: &Gradients, lr: f64, optimizer: Optimizer, adam: &mut Option<AdamState>) {
    match optimizer {
        Optimizer::Sgd => {
            for (p, g) in model.parameters_mut().into_iter().zip(&grads.tensors) {
                for (a, b) in p.data.iter_mut().zip(&g.data) {
                    *a -= lr * b;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            let state = adam.get_or_insert_with(|| AdamState {
                m: grads.tensors.iter().map(Tensor::zeros_like).collect(),
                v: grads.tensors.iter().map(Tensor::zeros_like).collect(),
                step: 0,
            });
            state.step += 1;
            let c1 = 1.0 - beta1.powi(state.step);
            let c2 = 1.0 - beta2.powi(state.step);
            for (((p, g), m), v) in model
                .parameters_mut()
                .into_iter()
                .zip(&grads.tensors)
                .zip(&mut state.m)
                .zip(&mut state.v)
            {
                for i in 0..p.data.len() {
                    let gi = g.data[i];
                    m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                    v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                    p.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + epsilon);
                }
            }
        }
    }
}

/// Trains `model` on `train_set`, scoring `validation` after every epoch, and
/// returns the parameters of the best validation epoch.
pub fn train<M: Trainable>(model: M, train_set: &WindowSet, validation: &WindowSet, cfg: &TrainConfig) -> Result<(M, TrainHistory)> {
    train_with_observer(model, train_set, validation, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_observer<M: Trainable>(
    mut model: M,
    train_set: &WindowSet,
    validation: &WindowSet,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<(M, TrainHistory)> {
    cfg.validate()?;
    check_data(&model, train_set, "training")?;
    check_data(&model, validation, "validation")?;
    let mut adam = None;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut reference = f64::INFINITY;
    let mut waited = 0;
    for epoch in 0..cfg.sgd.max_epochs {
        let lr = cfg.sgd.rate_at(epoch);
        let epoch_seed = rng::derive(cfg.seed, epoch as u64);
        let mut loss_sum = 0.0;
        for (bi, ids) in cfg.sgd.epoch_batches(train_set.len(), epoch).iter().enumerate() {
            let (w, t) = train_set.batch(ids);
            let (loss, grads) = model.loss_gradient(&w, &t, rng::derive(epoch_seed, bi as u64))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: cfg.sgd.learning_rate,
                });
            }
            loss_sum += loss * ids.len() as f64;
            apply_update(&mut model, &grads, lr, cfg.optimizer, &mut adam);
            model.after_step(lr);
        }
        let validation_loss = validation_mse(&model, validation)?;
        if !validation_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                learning_rate: cfg.sgd.learning_rate,
            });
        }
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / train_set.len() as f64,
            validation_loss,
        };
        observer(&record);
        history.epochs.push(record);
        if validation_loss < best_loss {
            best_loss = validation_loss;
            history.best_epoch = epoch;
            best = model.clone();
        }
        if reference - validation_loss > cfg.min_delta {
            reference = validation_loss;
            waited = 0;
        } else {
            waited += 1;
            if waited >= cfg.patience {
                history.stopped_early = epoch + 1 < cfg.sgd.max_epochs;
                break;
            }
        }
    }
    Ok((best, history))
}

/// Test metrics in °C: predictions and targets are mapped back through the
/// target standardizer before scoring.
pub fn evaluate<M: Trainable>(model: &M, test: &WindowSet, target_scaler: &Standardizer) -> Result<MetricsReport> {
    check_data(model, test, "test")?;
    let pred = target_scaler.inverse_transform(&predict_windows(model, test)?)?;
    let y = target_scaler.inverse_transform(&targets_of(test))?;
    metrics::report(&y, &pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::make_windows;
    use crate::linmodel::{fit_closed_form, BatchMode};

    fn synthetic(n: usize, seed: u64) -> WindowSet {
        use rand::Rng;
        let mut r = rng::seeded(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|v| {
                let base = 0.5 * v[0] - 1.5 * v[1] + 0.25 * v[2];
                vec![base + 0.1, -base, 2.0 * v[2] + 0.01 * r.random_range(-1.0..1.0)]
            })
            .collect();
        make_windows(Matrix::from_rows(&x).unwrap(), Matrix::from_rows(&y).unwrap(), 1, 1).unwrap()
    }

    fn ols(set: &WindowSet) -> LinearRegressor {
        let rows: Vec<Vec<f64>> = (0..set.len()).map(|k| set.window(k).to_vec()).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let models: Vec<LinearModel> = (0..3)
            .map(|j| {
                let y: Vec<f64> = (0..set.len()).map(|k| set.target(k)[j]).collect();
                fit_closed_form(&x, &y).unwrap()
            })
            .collect();
        let mut m = LinearRegressor::from_models(&models).unwrap();
        m.config = LinearConfig { alpha: 0.0, ..Default::default() };
        m
    }

    #[test]
    fn fixed_point_keeps_best_epoch_zero() {
        let (tr, va) = (synthetic(200, 1), synthetic(50, 2));
        let m = ols(&tr);
        let cfg = TrainConfig {
            sgd: SgdConfig { learning_rate: 1e-300, power: 0.0, batch_mode: BatchMode::Batch, max_epochs: 5, shuffle_seed: 0 },
            patience: 2,
            ..Default::default()
        };
        let (best, h) = train(m.clone(), &tr, &va, &cfg).unwrap();
        assert_eq!(h.best_epoch, 0);
        assert!(h.stopped_early);
        assert_eq!(h.epochs.len(), 3);
        assert!(h.epochs.windows(2).all(|w| (w[0].validation_loss - w[1].validation_loss).abs() < 1e-12));
        assert_eq!(best.weight.data.len(), m.weight.data.len());
    }

    #[test]
    fn sgd_reaches_closed_form_validation_mse() {
        let (tr, va) = (synthetic(400, 3), synthetic(100, 4));
        let oracle = validation_mse(&ols(&tr), &va).unwrap();
        let model = LinearRegressor::zeros(3, 3, LinearConfig { alpha: 0.0, ..Default::default() });
        let cfg = TrainConfig {
            sgd: SgdConfig { learning_rate: 0.05, power: 0.0, batch_mode: BatchMode::Minibatch(16), max_epochs: 200, shuffle_seed: 1 },
            patience: 200,
            ..Default::default()
        };
        let (best, h) = train(model, &tr, &va, &cfg).unwrap();
        let got = validation_mse(&best, &va).unwrap();
        assert!((got - oracle).abs() < 1e-3, "{got} vs {oracle}");
        assert_eq!(got, h.best_validation_loss());
    }

    #[test]
    fn batch_training_loss_is_monotone() {
        let (tr, va) = (synthetic(100, 5), synthetic(20, 6));
        let model = LinearRegressor::zeros(3, 3, LinearConfig { alpha: 0.0, ..Default::default() });
        let cfg = TrainConfig {
            sgd: SgdConfig { learning_rate: 0.1, power: 0.0, batch_mode: BatchMode::Batch, max_epochs: 60, shuffle_seed: 0 },
            patience: 100,
            ..Default::default()
        };
        let (_, h) = train(model, &tr, &va, &cfg).unwrap();
        assert!(h.epochs.windows(2).all(|w| w[1].train_loss <= w[0].train_loss));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = LinearRegressor::zeros(4, 3, LinearConfig::default());
        assert!(matches!(
            train(model, &synthetic(10, 1), &synthetic(10, 2), &TrainConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mse_upstream_matches_definition() {
        let pred = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]).unwrap();
        let (l, g) = mse_upstream(&pred, &[&[0.0, 2.0], &[1.0, 1.0]]).unwrap();
        assert_eq!(l, (1.0 + 0.0 + 1.0 + 4.0) / 4.0);
        assert_eq!(g.row(0), &[1.0, 0.0]);
        assert_eq!(g.row(1), &[-1.0, -2.0]);
    }
}
