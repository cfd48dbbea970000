//! A trained estimator bundled with its exact input pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cnnmodel::{CnnConfig, CnnModel};
use crate::dataio::{Dataset, Profile, Split, N_TARGETS};
use crate::error::{Error, Result};
use crate::features::{expand_raw, make_windows, SpanSet, Standardizer, WindowSet};
use crate::linmodel::{self, LinearConfig, LossKind};
use crate::metrics::{self, MetricsReport};
use crate::rnnmodel::{RnnConfig, RnnModel};
use crate::tensor::{Gradients, Matrix, Tensor};
use crate::train::{self, EpochRecord, LinearRegressor, Leaderboard, SearchSpace, TrainConfig, TrainHistory, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Cnn,
    Rnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [Self::Linear, Self::Cnn, Self::Rnn];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Cnn => "cnn",
            Self::Rnn => "rnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cnn" => Ok(Self::Cnn),
            "rnn" | "lstm" => Ok(Self::Rnn),
            other => Err(Error::Config(format!("unsupported model kind '{other}' (expected linear, cnn or rnn)"))),
        }
    }
}

/// Hyperparameters of one model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "config")]
pub enum ModelSpec {
    Linear(LinearConfig),
    Cnn(CnnConfig),
    Rnn(RnnConfig),
}

impl ModelSpec {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Linear => Self::Linear(LinearConfig::default()),
            ModelKind::Cnn => Self::Cnn(CnnConfig::default()),
            ModelKind::Rnn => Self::Rnn(RnnConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Linear(_) => ModelKind::Linear,
            Self::Cnn(_) => ModelKind::Cnn,
            Self::Rnn(_) => ModelKind::Rnn,
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            Self::Linear(_) => 1,
            Self::Cnn(c) => c.seq_len,
            Self::Rnn(c) => c.seq_len,
        }
    }

    /// The kind's configuration as a bare JSON object.
    pub fn config_json(&self) -> Result<Value> {
        Ok(match self {
            Self::Linear(c) => serde_json::to_value(c)?,
            Self::Cnn(c) => serde_json::to_value(c)?,
            Self::Rnn(c) => serde_json::to_value(c)?,
        })
    }

    pub fn from_config_json(kind: ModelKind, config: Value) -> Result<Self> {
        Ok(match kind {
            ModelKind::Linear => Self::Linear(serde_json::from_value(config)?),
            ModelKind::Cnn => Self::Cnn(serde_json::from_value(config)?),
            ModelKind::Rnn => Self::Rnn(serde_json::from_value(config)?),
        })
    }

    /// Fresh model with the input width fixed to `n_inputs`.
    pub fn init(&self, n_inputs: usize, seed: u64) -> Result<Estimator> {
        Ok(match self {
            Self::Linear(c) => {
                c.validate()?;
                Estimator::Linear(LinearRegressor::zeros(n_inputs, N_TARGETS, c.clone()))
            }
            Self::Cnn(c) => Estimator::Cnn(CnnModel::init(
                CnnConfig {
                    n_inputs,
                    n_outputs: N_TARGETS,
                    ..c.clone()
                },
                seed,
            )?),
            Self::Rnn(c) => Estimator::Rnn(RnnModel::init(
                RnnConfig {
                    n_inputs,
                    n_outputs: N_TARGETS,
                    ..c.clone()
                },
                seed,
            )?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Linear(LinearRegressor),
    Cnn(CnnModel),
    Rnn(RnnModel),
}

impl Estimator {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Linear(_) => ModelKind::Linear,
            Self::Cnn(_) => ModelKind::Cnn,
            Self::Rnn(_) => ModelKind::Rnn,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Self::Linear(m) => ModelSpec::Linear(m.config.clone()),
            Self::Cnn(m) => ModelSpec::Cnn(m.config.clone()),
            Self::Rnn(m) => ModelSpec::Rnn(m.config.clone()),
        }
    }

    /// Rebuilds an estimator from its spec and tensors in canonical order.
    pub fn from_parts(spec: ModelSpec, n_inputs: usize, tensors: Vec<Tensor>) -> Result<Self> {
        match spec {
            ModelSpec::Linear(config) => {
                let [weight, bias]: [Tensor; 2] = tensors
                    .try_into()
                    .map_err(|t: Vec<Tensor>| Error::Shape(format!("linear model needs 2 tensors, got {}", t.len())))?;
                if weight.shape != [N_TARGETS, n_inputs] || bias.shape != [N_TARGETS] {
                    return Err(Error::Shape(format!(
                        "linear tensors {:?} / {:?} do not match {N_TARGETS} × {n_inputs}",
                        weight.shape, bias.shape
                    )));
                }
                Ok(Self::Linear(LinearRegressor { config, weight, bias }))
            }
            ModelSpec::Cnn(c) => Ok(Self::Cnn(CnnModel::from_tensors(c, tensors)?)),
            ModelSpec::Rnn(c) => Ok(Self::Rnn(RnnModel::from_tensors(c, tensors)?)),
        }
    }
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            Estimator::Linear($m) => $body,
            Estimator::Cnn($m) => $body,
            Estimator::Rnn($m) => $body,
        }
    };
}

impl Trainable for Estimator {
    fn seq_len(&self) -> usize {
        dispatch!(self, m => m.seq_len())
    }

    fn n_inputs(&self) -> usize {
        dispatch!(self, m => m.n_inputs())
    }

    fn n_outputs(&self) -> usize {
        dispatch!(self, m => m.n_outputs())
    }

    fn predict_batch(&self, windows: &[&[f64]]) -> Result<Matrix> {
        dispatch!(self, m => m.predict_batch(windows))
    }

    fn loss_gradient(&self, windows: &[&[f64]], targets: &[&[f64]], seed: u64) -> Result<(f64, Gradients)> {
        dispatch!(self, m => m.loss_gradient(windows, targets, seed))
    }

    fn parameters(&self) -> Vec<&Tensor> {
        dispatch!(self, m => m.parameters())
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        dispatch!(self, m => m.parameters_mut())
    }

    fn after_step(&mut self, learning_rate: f64) {
        dispatch!(self, m => m.after_step(learning_rate))
    }
}

/// EWMA spans plus the input and target standardizers fitted on the
/// training profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub spans: SpanSet,
    pub input_scaler: Standardizer,
    pub target_scaler: Standardizer,
}

fn profile_targets(profile: &Profile) -> Result<Matrix> {
    let cols = profile.target_columns();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    Matrix::from_columns(&refs)
}

fn profile_raw_features(profile: &Profile, spans: &SpanSet) -> Result<Matrix> {
    let cols = profile.input_columns();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    expand_raw(&refs, spans)
}

impl Pipeline {
    /// Fits both standardizers on the concatenated training profiles. EWMA
    /// state restarts at every profile.
    pub fn fit(profiles: &[&Profile], spans: SpanSet) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::InvalidInput("no training profiles".into()));
        }
        let raw: Vec<Matrix> = profiles.iter().map(|p| profile_raw_features(p, &spans)).collect::<Result<_>>()?;
        let targets: Vec<Matrix> = profiles.iter().map(|p| profile_targets(p)).collect::<Result<_>>()?;
        Ok(Self {
            input_scaler: Standardizer::fit(&Matrix::vstack(&raw.iter().collect::<Vec<_>>())?)?,
            target_scaler: Standardizer::fit(&Matrix::vstack(&targets.iter().collect::<Vec<_>>())?)?,
            spans,
        })
    }

    pub fn n_features(&self) -> usize {
        self.spans.n_features()
    }

    /// Standardized feature matrix of one profile.
    pub fn features(&self, profile: &Profile) -> Result<Matrix> {
        let mut x = profile_raw_features(profile, &self.spans)?;
        self.input_scaler.transform_in_place(&mut x)?;
        Ok(x)
    }

    /// Standardized targets of one profile.
    pub fn targets(&self, profile: &Profile) -> Result<Matrix> {
        let mut y = profile_targets(profile)?;
        self.target_scaler.transform_in_place(&mut y)?;
        Ok(y)
    }

    pub fn windows(&self, profile: &Profile, seq_len: usize, stride: usize) -> Result<WindowSet> {
        if seq_len > profile.len() {
            return Err(Error::InvalidInput(format!(
                "profile {} has {} samples, shorter than the model's sequence length {seq_len}",
                profile.id,
                profile.len()
            )));
        }
        make_windows(self.features(profile)?, self.targets(profile)?, seq_len, stride)
    }

    pub fn window_set(&self, profiles: &[&Profile], seq_len: usize, stride: usize) -> Result<WindowSet> {
        WindowSet::concat(profiles.iter().map(|p| self.windows(p, seq_len, stride)).collect::<Result<_>>()?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub training_profiles: Vec<String>,
    pub validation_profiles: Vec<String>,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub estimator: Estimator,
    pub pipeline: Pipeline,
    pub meta: ModelMeta,
}

/// Measured and predicted temperatures (°C) at the end of every window.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePrediction {
    pub t: Vec<i64>,
    pub measured: Matrix,
    pub predicted: Matrix,
}

impl ProfilePrediction {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Measured minus predicted.
    pub fn residuals(&self) -> Matrix {
        let mut r = self.measured.clone();
        for (a, b) in r.as_mut_slice().iter_mut().zip(self.predicted.as_slice()) {
            *a -= b;
        }
        r
    }

    pub fn report(&self) -> Result<MetricsReport> {
        metrics::report(&self.measured, &self.predicted)
    }
}

/// Anything that can nowcast the three targets along a profile.
pub trait TemperatureEstimator {
    fn seq_len(&self) -> usize;
    fn predict_profile(&self, profile: &Profile) -> Result<ProfilePrediction>;
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.estimator.kind()
    }

    pub fn was_trained_on(&self, profile_id: &str) -> bool {
        self.meta.training_profiles.iter().any(|p| p == profile_id)
    }
}

impl TemperatureEstimator for TrainedModel {
    fn seq_len(&self) -> usize {
        self.estimator.seq_len()
    }

    /// Causal nowcast: one prediction per window ending at each sample from
    /// index `seq_len − 1` on.
    fn predict_profile(&self, profile: &Profile) -> Result<ProfilePrediction> {
        let seq_len = self.estimator.seq_len();
        let windows = self.pipeline.windows(profile, seq_len, 1)?;
        let scaled = train::predict_windows(&self.estimator, &windows)?;
        let predicted = self.pipeline.target_scaler.inverse_transform(&scaled)?;
        let raw = profile_targets(profile)?;
        let mut measured = Matrix::zeros(windows.len(), raw.cols());
        let mut t = Vec::with_capacity(windows.len());
        for k in 0..windows.len() {
            let (_, row) = windows.end_index(k);
            measured.row_mut(k).copy_from_slice(raw.row(row));
            t.push(profile.frames[row].t);
        }
        Ok(ProfilePrediction { t, measured, predicted })
    }
}

/// Data preparation and training settings shared by every kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub spans: SpanSet,
    pub train: TrainConfig,
    /// Seed for weight initialization.
    pub init_seed: u64,
    /// Window stride over training profiles (1 keeps every window).
    pub train_stride: usize,
    /// Window stride over validation profiles.
    pub validation_stride: usize,
    /// How linear models are fitted; ignored by the networks.
    pub solver: LinearSolver,
}

/// `gradient` runs the iterative trainer; `closed_form` solves unpenalized
/// least squares exactly and so needs squared loss with `alpha` 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    #[default]
    Gradient,
    ClosedForm,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            spans: SpanSet::default(),
            train: TrainConfig::default(),
            init_seed: 0,
            train_stride: 1,
            validation_stride: 1,
            solver: LinearSolver::Gradient,
        }
    }
}

/// Windowed, standardized training and validation sets for one split.
pub struct PreparedData {
    pub pipeline: Pipeline,
    pub train: WindowSet,
    pub validation: WindowSet,
}

pub fn prepare(dataset: &Dataset, split: &Split, seq_len: usize, opts: &FitOptions) -> Result<PreparedData> {
    let train_profiles = dataset.select(&split.train)?;
    let validation_profiles = dataset.select(&split.validation)?;
    if validation_profiles.is_empty() {
        return Err(Error::InvalidInput("split has no validation profiles".into()));
    }
    let pipeline = Pipeline::fit(&train_profiles, opts.spans.clone())?;
    let train = pipeline.window_set(&train_profiles, seq_len, opts.train_stride.max(1))?;
    let validation = pipeline.window_set(&validation_profiles, seq_len, opts.validation_stride.max(1))?;
    Ok(PreparedData {
        pipeline,
        train,
        validation,
    })
}

/// Trains a fresh `spec` model on `data`.
pub fn fit_prepared(spec: &ModelSpec, data: &PreparedData, split: &Split, opts: &FitOptions) -> Result<(TrainedModel, TrainHistory)> {
    let (estimator, history) = match (spec, opts.solver) {
        (ModelSpec::Linear(cfg), LinearSolver::ClosedForm) => fit_linear_exact(cfg, data)?,
        _ => {
            let init = spec.init(data.pipeline.n_features(), opts.init_seed)?;
            train::train(init, &data.train, &data.validation, &opts.train)?
        }
    };
    Ok((
        TrainedModel {
            estimator,
            pipeline: data.pipeline.clone(),
            meta: ModelMeta {
                training_profiles: split.train.clone(),
                validation_profiles: split.validation.clone(),
                train_config: Some(opts.train.clone()),
            },
        },
        history,
    ))
}

/// Per-target least squares on the training windows. The history holds a
/// single record with the training and validation MSE.
fn fit_linear_exact(cfg: &LinearConfig, data: &PreparedData) -> Result<(Estimator, TrainHistory)> {
    if cfg.loss != LossKind::Squared || cfg.alpha != 0.0 {
        return Err(Error::Config(
            "closed_form solver needs squared loss and alpha = 0".into(),
        ));
    }
    let set = &data.train;
    if set.seq_len() != 1 {
        return Err(Error::Config("linear models use windows of length 1".into()));
    }
    let rows: Vec<Vec<f64>> = (0..set.len()).map(|k| set.window(k).to_vec()).collect();
    let x = Matrix::from_rows(&rows)?;
    let models = (0..set.n_targets())
        .map(|j| {
            let y: Vec<f64> = (0..set.len()).map(|k| set.target(k)[j]).collect();
            let mut m = linmodel::fit_closed_form(&x, &y)?;
            m.config = cfg.clone();
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let estimator = Estimator::Linear(LinearRegressor::from_models(&models)?);
    let record = EpochRecord {
        epoch: 0,
        learning_rate: 0.0,
        train_loss: train::validation_mse(&estimator, set)?,
        validation_loss: train::validation_mse(&estimator, &data.validation)?,
    };
    let history = TrainHistory {
        epochs: vec![record],
        best_epoch: 0,
        stopped_early: false,
    };
    Ok((estimator, history))
}

pub fn fit(spec: &ModelSpec, dataset: &Dataset, split: &Split, opts: &FitOptions) -> Result<(TrainedModel, TrainHistory)> {
    let data = prepare(dataset, split, spec.seq_len(), opts)?;
    fit_prepared(spec, &data, split, opts)
}

/// The search template: `{"model": <kind config>, "train": <TrainConfig>}`.
pub fn search_template(spec: &ModelSpec, train: &TrainConfig) -> Result<Value> {
    Ok(serde_json::json!({
        "model": spec.config_json()?,
        "train": serde_json::to_value(train)?,
    }))
}

/// Hyperparameter search for one model kind on one split. Keys of the space
/// address the template, e.g. `model.alpha` or `train.sgd.learning_rate`.
pub fn search_kind(spec: &ModelSpec, space: &SearchSpace, dataset: &Dataset, split: &Split, opts: &FitOptions) -> Result<Leaderboard> {
    let template = search_template(spec, &opts.train)?;
    let kind = spec.kind();
    let mut cache: Option<(usize, PreparedData)> = None;
    train::search(space, &template, |_, doc| {
        let trial_spec = ModelSpec::from_config_json(kind, doc["model"].clone())?;
        let trial_opts = FitOptions {
            train: serde_json::from_value(doc["train"].clone())?,
            ..opts.clone()
        };
        let seq_len = trial_spec.seq_len();
        if cache.as_ref().map(|(s, _)| *s) != Some(seq_len) {
            cache = Some((seq_len, prepare(dataset, split, seq_len, opts)?));
        }
        let data = &cache.as_ref().expect("prepared above").1;
        let (_, history) = fit_prepared(&trial_spec, data, split, &trial_opts)?;
        Ok(history.best_validation_loss())
    })
}
