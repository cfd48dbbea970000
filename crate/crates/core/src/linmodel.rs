//! Linear regression baseline: closed-form least squares, three pluggable
//! losses and elastic-net regularized gradient descent. One model per target.
//!
//! The penalty uses the `alpha` / `l1_ratio` parameterization:
//! `alpha · (l1_ratio · ‖β‖₁ + ½ (1 − l1_ratio) · ‖β‖²)`, i.e.
//! `λ₁ = alpha · l1_ratio` and `λ₂ = alpha · (1 − l1_ratio)`. The intercept is
//! never penalized.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    EpsilonInsensitive,
    Huber,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" | "squared_error" => Ok(Self::Squared),
            "epsilon_insensitive" => Ok(Self::EpsilonInsensitive),
            "huber" => Ok(Self::Huber),
            _ => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }
}

/// Loss and its derivative with respect to the prediction, for the residual
/// `r = y − prediction`.
///
/// * squared: `½ r²`, derivative `−r`
/// * epsilon-insensitive: `max(|r| − ε, 0)`, derivative `−sign(r)` outside the
///   margin and 0 inside it (including the kink)
/// * Huber: `½ r²` for `|r| ≤ δ`, else `δ (|r| − ½ δ)`; derivative `−r` inside,
///   `−δ sign(r)` outside
pub fn loss_and_subgradient(kind: LossKind, r: f64, epsilon: f64, delta: f64) -> (f64, f64) {
    match kind {
        LossKind::Squared => (0.5 * r * r, -r),
        LossKind::EpsilonInsensitive => {
            if r.abs() <= epsilon {
                (0.0, 0.0)
            } else {
                (r.abs() - epsilon, -r.signum())
            }
        }
        LossKind::Huber => {
            if r.abs() <= delta {
                (0.5 * r * r, -r)
            } else {
                (delta * (r.abs() - 0.5 * delta), -delta * r.signum())
            }
        }
    }
}

/// Hyperparameters of one linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub loss: LossKind,
    /// Margin of the epsilon-insensitive loss, standardized target units.
    pub epsilon: f64,
    /// Knee of the Huber loss.
    pub delta: f64,
    /// Penalty coefficient.
    pub alpha: f64,
    /// Mixing parameter; 1 is pure L1.
    pub l1_ratio: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Squared,
            epsilon: 0.1,
            delta: 1.0,
            alpha: 0.43,
            l1_ratio: 0.99,
        }
    }
}

impl LinearConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon {} must be ≥ 0", self.epsilon)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta {} must be > 0", self.delta)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha {} must be ≥ 0", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(Error::Config(format!("l1_ratio {} outside [0, 1]", self.l1_ratio)));
        }
        Ok(())
    }

    pub fn lambda1(&self) -> f64 {
        self.alpha * self.l1_ratio
    }

    pub fn lambda2(&self) -> f64 {
        self.alpha * (1.0 - self.l1_ratio)
    }

    pub fn loss(&self, r: f64) -> (f64, f64) {
        loss_and_subgradient(self.loss, r, self.epsilon, self.delta)
    }

    /// `alpha · (l1_ratio · ‖β‖₁ + ½ (1 − l1_ratio) · ‖β‖²)`
    pub fn penalty(&self, beta: &[f64]) -> f64 {
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        let l2: f64 = beta.iter().map(|b| b * b).sum();
        self.lambda1() * l1 + 0.5 * self.lambda2() * l2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub beta: Vec<f64>,
    pub beta0: f64,
    pub config: LinearConfig,
}

impl LinearModel {
    pub fn zeros(n_features: usize, config: LinearConfig) -> Self {
        Self {
            beta: vec![0.0; n_features],
            beta0: 0.0,
            config,
        }
    }

    pub fn n_features(&self) -> usize {
        self.beta.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.beta0 + dot(&self.beta, x)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.rows() > 0 && x.cols() != self.beta.len() {
            return Err(Error::Shape(format!(
                "model has {} weights, input has {} columns",
                self.beta.len(),
                x.cols()
            )));
        }
        Ok(x.row_iter().map(|row| self.predict_row(row)).collect())
    }

    /// Mean loss plus penalty.
    pub fn objective(&self, x: &Matrix, y: &[f64]) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.len() != y.len() || y.is_empty() {
            return Err(Error::Shape(format!("{} rows vs {} targets", pred.len(), y.len())));
        }
        let loss: f64 = y.iter().zip(&pred).map(|(t, p)| self.config.loss(t - p).0).sum();
        Ok(loss / y.len() as f64 + self.config.penalty(&self.beta))
    }

    /// Mean loss in reporting units: the squared loss is rescaled by 2 so the
    /// value is the mean squared error.
    pub fn reported_loss(&self, x: &Matrix, y: &[f64]) -> Result<f64> {
        let pred = self.predict(x)?;
        let scale = if self.config.loss == LossKind::Squared { 2.0 } else { 1.0 };
        let loss: f64 = y.iter().zip(&pred).map(|(t, p)| self.config.loss(t - p).0).sum();
        Ok(scale * loss / y.len().max(1) as f64)
    }

    /// Soft-thresholds the weights by `threshold` (proximal step of the L1 term).
    pub fn shrink(&mut self, threshold: f64) {
        if threshold > 0.0 {
            for b in &mut self.beta {
                *b = b.signum() * (b.abs() - threshold).max(0.0);
            }
        }
    }

    /// Accumulates `d(mean loss)/dβ` and `d/dβ₀` over the given rows and
    /// returns the summed loss.
    pub(crate) fn accumulate_gradient<'a>(
        &self,
        rows: impl Iterator<Item = (&'a [f64], f64)>,
        grad_beta: &mut [f64],
        grad_beta0: &mut f64,
    ) -> f64 {
        let mut total = 0.0;
        for (x, y) in rows {
            let (l, d) = self.config.loss(y - self.predict_row(x));
            total += l;
            if d != 0.0 {
                for (g, xi) in grad_beta.iter_mut().zip(x) {
                    *g += d * xi;
                }
                *grad_beta0 += d;
            }
        }
        total
    }
}

/// Ordinary least squares with an intercept, solved by Householder QR of the
/// augmented design (numerically equivalent to the normal equations).
pub fn fit_closed_form(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("{n} rows vs {} targets", y.len())));
    }
    let m = p + 1;
    if n < m {
        return Err(Error::InvalidInput(format!(
            "least squares needs at least {m} rows, got {n}"
        )));
    }
    // Column-major augmented design [1 | X].
    let mut a = vec![0.0; n * m];
    a[..n].fill(1.0);
    for (i, row) in x.row_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            a[(j + 1) * n + i] = *v;
        }
    }
    let mut rhs = y.to_vec();
    let mut diag = vec![0.0; m];
    for k in 0..m {
        let (done, rest) = a.split_at_mut(k * n + n);
        let col = &mut done[k * n..];
        let norm = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Singular);
        }
        let alpha = if col[k] > 0.0 { -norm } else { norm };
        col[k] -= alpha;
        let vnorm2: f64 = col[k..].iter().map(|v| v * v).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let v = &col[k..];
        for c in rest.chunks_exact_mut(n) {
            let s = 2.0 * dot(v, &c[k..]) / vnorm2;
            for (ci, vi) in c[k..].iter_mut().zip(v) {
                *ci -= s * vi;
            }
        }
        let s = 2.0 * dot(v, &rhs[k..]) / vnorm2;
        for (ri, vi) in rhs[k..].iter_mut().zip(v) {
            *ri -= s * vi;
        }
    }
    let scale = diag.iter().fold(0.0f64, |s, d| s.max(d.abs()));
    if diag.iter().any(|d| d.abs() <= 1e-10 * scale) {
        return Err(Error::Singular);
    }
    let mut coef = vec![0.0; m];
    for k in (0..m).rev() {
        let mut s = rhs[k];
        for j in k + 1..m {
            s -= a[j * n + k] * coef[j];
        }
        coef[k] = s / diag[k];
    }
    Ok(LinearModel {
        beta0: coef[0],
        beta: coef[1..].to_vec(),
        config: LinearConfig {
            alpha: 0.0,
            l1_ratio: 0.0,
            ..LinearConfig::default()
        },
    })
}

/// How many samples contribute to each update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchMode {
    /// The full training set per update.
    Batch,
    /// One sample per update.
    Stochastic,
    /// Fixed-size shuffled batches.
    Minibatch(usize),
}

/// Gradient-descent settings shared by every model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    /// Initial step size γ₀.
    pub learning_rate: f64,
    /// Inverse-scaling exponent: γ_t = γ₀ / (1 + t)^power, t = epoch index.
    pub power: f64,
    pub batch_mode: BatchMode,
    pub max_epochs: usize,
    pub shuffle_seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            power: 0.25,
            batch_mode: BatchMode::Minibatch(32),
            max_epochs: 50,
            shuffle_seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(self.power >= 0.0) {
            return Err(Error::Config(format!("schedule power {} must be ≥ 0", self.power)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be ≥ 1".into()));
        }
        if self.batch_mode == BatchMode::Minibatch(0) {
            return Err(Error::Config("minibatch size must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate / (1.0 + epoch as f64).powf(self.power)
    }

    /// Sample order for one epoch, split into update batches. Batch mode keeps
    /// the natural order; the other modes reshuffle every epoch.
    pub fn epoch_batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        let size = match self.batch_mode {
            BatchMode::Batch => return vec![order],
            BatchMode::Stochastic => 1,
            BatchMode::Minibatch(s) => s,
        };
        let mut r = rng::seeded(rng::derive(self.shuffle_seed, epoch as u64));
        order.shuffle(&mut r);
        order.chunks(size).map(<[usize]>::to_vec).collect()
    }
}

/// Objective trace of a gradient-descent fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdHistory {
    pub initial_objective: f64,
    /// Objective (mean loss + penalty) after each epoch.
    pub objective: Vec<f64>,
    /// Mean loss after each epoch, in reporting units (MSE for squared loss).
    pub loss: Vec<f64>,
}

/// Proximal gradient descent on mean loss + elastic-net penalty, starting
/// from zero weights. The smooth part (loss and L2) takes a gradient step;
/// the L1 part is applied as soft-thresholding, which yields exact zeros.
/// Features are expected to be standardized.
pub fn fit_sgd(x: &Matrix, y: &[f64], config: &LinearConfig, sgd: &SgdConfig) -> Result<(LinearModel, SgdHistory)> {
    config.validate()?;
    sgd.validate()?;
    let (n, p) = x.shape();
    if y.len() != n || n == 0 {
        return Err(Error::Shape(format!("{n} rows vs {} targets", y.len())));
    }
    let mut model = LinearModel::zeros(p, config.clone());
    let initial = model.objective(x, y)?;
    let mut history = SgdHistory {
        initial_objective: initial,
        objective: Vec::with_capacity(sgd.max_epochs),
        loss: Vec::with_capacity(sgd.max_epochs),
    };
    let mut grad = vec![0.0; p];
    for epoch in 0..sgd.max_epochs {
        let lr = sgd.rate_at(epoch);
        for batch in sgd.epoch_batches(n, epoch) {
            grad.fill(0.0);
            let mut g0 = 0.0;
            model.accumulate_gradient(batch.iter().map(|&i| (x.row(i), y[i])), &mut grad, &mut g0);
            let inv = 1.0 / batch.len() as f64;
            let l2 = config.lambda2();
            for (b, g) in model.beta.iter_mut().zip(&grad) {
                *b -= lr * (g * inv + l2 * *b);
            }
            model.beta0 -= lr * g0 * inv;
            model.shrink(lr * config.lambda1());
        }
        let obj = model.objective(x, y)?;
        if !obj.is_finite() || obj > 1e6 * initial.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence {
                epoch,
                learning_rate: sgd.learning_rate,
            });
        }
        history.objective.push(obj);
        history.loss.push(model.reported_loss(x, y)?);
    }
    Ok((model, history))
}
