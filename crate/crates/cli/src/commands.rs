use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thermoguard::dataio::{self, Dataset, Profile, TARGET_NAMES};
use thermoguard::linmodel::{BatchMode, SgdConfig};
use thermoguard::model::{self, FitOptions, ModelKind, ModelSpec, TemperatureEstimator, TrainedModel};
use thermoguard::monitor::{self, AlertPolicy, MonitorConfig};
use thermoguard::rng;
use thermoguard::simulate::{self, DatasetSpec, FaultSpec, MachineRating, PlantParams};
use thermoguard::train::{Optimizer, SearchSpace, SearchStrategy, TrainConfig};
use thermoguard::Error;

use crate::manifest::ManifestBuilder;
use crate::{CalibrateArgs, DataArgs, EvaluateArgs, MonitorArgs, SearchArgs, SimulateArgs, TrainArgs};
use crate::{EXIT_ALERTS, EXIT_ERROR, EXIT_NO_INPUT, EXIT_USAGE};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    NoInput(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::NoInput(_) => EXIT_NO_INPUT,
            Self::Runtime(_) => EXIT_ERROR,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) | Self::NoInput(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn input_error(e: Error) -> CliError {
    match e {
        Error::Io { .. } | Error::Load { .. } | Error::NoProfiles(_) => CliError::NoInput(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::NoInput(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: invalid JSON: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    dataio::load_dataset(path).map_err(input_error)
}

fn load_trained(path: &Path) -> CliResult<TrainedModel> {
    dataio::load_model(path).map_err(input_error)
}

fn select<'a>(dataset: &'a Dataset, ids: &[String]) -> CliResult<Vec<&'a Profile>> {
    if ids.is_empty() {
        return Ok(dataset.profiles.iter().collect());
    }
    dataset.select(ids).map_err(|e| CliError::Usage(e.to_string()))
}

/// Recursive object overlay: keys in `patch` replace or extend `base`.
fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Training defaults per kind: plain SGD for the linear model, Adam for the
/// networks.
pub fn default_fit(kind: ModelKind) -> FitOptions {
    let train = match kind {
        ModelKind::Linear => TrainConfig {
            sgd: SgdConfig {
                learning_rate: 0.01,
                power: 0.25,
                batch_mode: BatchMode::Minibatch(64),
                max_epochs: 50,
                shuffle_seed: 0,
            },
            ..TrainConfig::default()
        },
        ModelKind::Cnn | ModelKind::Rnn => TrainConfig {
            sgd: SgdConfig {
                learning_rate: 1e-3,
                power: 0.0,
                batch_mode: BatchMode::Minibatch(32),
                max_epochs: 30,
                shuffle_seed: 0,
            },
            optimizer: Optimizer::adam(),
            ..TrainConfig::default()
        },
    };
    FitOptions {
        train,
        ..FitOptions::default()
    }
}

/// Model spec and fit options from the defaults overlaid with an optional
/// `{"model": …, "fit": …}` file.
fn resolve_config(kind: ModelKind, path: Option<&Path>) -> CliResult<(ModelSpec, FitOptions)> {
    let mut model_json = ModelSpec::default_for(kind).config_json()?;
    let mut fit_json = serde_json::to_value(default_fit(kind)).map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(p) = path {
        let doc = read_json(p)?;
        if let Some(obj) = doc.as_object() {
            if let Some(unknown) = obj.keys().find(|k| *k != "model" && *k != "fit") {
                return Err(CliError::Usage(format!("{}: unknown section '{unknown}'", p.display())));
            }
        }
        if let Some(m) = doc.get("model") {
            merge(&mut model_json, m);
        }
        if let Some(f) = doc.get("fit") {
            merge(&mut fit_json, f);
        }
    }
    let spec = ModelSpec::from_config_json(kind, model_json).map_err(|e| CliError::Usage(format!("model config: {e}")))?;
    let fit: FitOptions = serde_json::from_value(fit_json).map_err(|e| CliError::Usage(format!("fit config: {e}")))?;
    Ok((spec, fit))
}

fn apply_seed(fit: &mut FitOptions, seed: u64) {
    fit.init_seed = rng::derive(seed, 0);
    fit.train.sgd.shuffle_seed = rng::derive(seed, 1);
    fit.train.seed = rng::derive(seed, 2);
}

fn seeds_json(fit: &FitOptions) -> Value {
    json!({
        "init_seed": fit.init_seed,
        "shuffle_seed": fit.train.sgd.shuffle_seed,
        "dropout_seed": fit.train.seed,
    })
}

fn split_for(dataset: &Dataset, data: &DataArgs) -> CliResult<dataio::Split> {
    if dataset.get(&data.test_profile).is_none() {
        return Err(CliError::Usage(format!("unknown test profile '{}'", data.test_profile)));
    }
    dataio::lopo_split_for(dataset, data.validation, &data.test_profile).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn simulate(a: &SimulateArgs) -> CliResult<u8> {
    if !(a.hours > 0.0 && a.hours.is_finite()) {
        return Err(CliError::Usage(format!("--hours {} must be > 0", a.hours)));
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(CliError::Usage(format!("--noise {} must be ≥ 0", a.noise)));
    }
    let duration_s = (a.hours * 3600.0).round() as i64;
    if duration_s < simulate::MIN_PROFILE_DURATION_S {
        return Err(CliError::Usage(format!(
            "profiles must last at least {} s",
            simulate::MIN_PROFILE_DURATION_S
        )));
    }
    let mut mb = ManifestBuilder::new("simulate");
    let plant: PlantParams = match &a.plant {
        Some(p) => {
            mb.manifest.inputs.push(p.clone());
            serde_json::from_value(read_json(p)?).map_err(|e| CliError::Usage(format!("plant: {e}")))?
        }
        None => simulate::default_plant(&MachineRating::default()),
    };
    let fault = a.fault.map(|(b, t)| FaultSpec::new(b, t)).transpose()?;
    let spec = DatasetSpec {
        n_profiles: a.profiles as usize,
        duration_s,
        noise_std_c: a.noise,
        seed: a.seed,
        fault,
    };
    let dataset = simulate::simulate_dataset(&spec, &plant)?;
    prepare_out(&a.out)?;
    dataio::export_dataset(&dataset, &a.out)?;
    let plant_path = a.out.join("plant.json");
    write_json(&plant_path, &plant)?;
    mb.manifest.config = json!({ "dataset": spec, "plant": plant });
    mb.manifest.seeds = json!({ "seed": a.seed });
    mb.manifest.outputs = dataset.profiles.iter().map(|p| a.out.join(format!("{}.csv", p.id))).collect();
    mb.manifest.outputs.push(plant_path);
    eprintln!("wrote {} profiles to {}", dataset.len(), a.out.display());
    mb.finish(&a.out)?;
    Ok(0)
}

pub fn train(a: &TrainArgs) -> CliResult<u8> {
    let mut mb = ManifestBuilder::new("train");
    let (spec, mut fit) = resolve_config(a.kind, a.config.as_deref())?;
    if let Some(seed) = a.seed {
        apply_seed(&mut fit, seed);
    }
    if let Some(e) = a.epochs {
        fit.train.sgd.max_epochs = e;
    }
    let dataset = load_data(&a.data.data)?;
    let split = split_for(&dataset, &a.data)?;
    prepare_out(&a.out)?;
    let (trained, history) = model::fit(&spec, &dataset, &split, &fit)?;
    let model_path = a.out.join("model.thgm");
    dataio::save_model(&trained, &model_path)?;
    let history_path = a.out.join("history.json");
    write_json(&history_path, &history)?;
    let best = history.best_validation_loss();
    eprintln!(
        "trained {} for {} epochs; best validation MSE {best:.6} at epoch {}",
        a.kind,
        history.epochs.len(),
        history.best_epoch
    );
    mb.manifest.config = json!({ "kind": a.kind, "model": spec.config_json()?, "fit": fit, "split": split });
    mb.manifest.seeds = seeds_json(&fit);
    mb.manifest.inputs.push(a.data.data.clone());
    mb.manifest.inputs.extend(a.config.clone());
    mb.manifest.outputs = vec![model_path, history_path];
    mb.finish(&a.out)?;
    Ok(0)
}

pub fn search(a: &SearchArgs) -> CliResult<u8> {
    let mut mb = ManifestBuilder::new("search");
    let (spec, fit) = resolve_config(a.kind, a.config.as_deref())?;
    let mut space: SearchSpace =
        serde_json::from_value(read_json(&a.space)?).map_err(|e| CliError::Usage(format!("search space: {e}")))?;
    if let Some(b) = a.budget {
        space.budget = b as usize;
    }
    if let Some(seed) = a.seed {
        space.strategy = SearchStrategy::Random { seed };
    }
    space.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dataset = load_data(&a.data.data)?;
    let split = split_for(&dataset, &a.data)?;
    prepare_out(&a.out)?;
    let board = model::search_kind(&spec, &space, &dataset, &split, &fit)?;
    let board_path = a.out.join("leaderboard.json");
    write_json(&board_path, &board)?;
    let best = board.best();
    eprintln!(
        "best of {} trials: #{} validation MSE {:.6}",
        board.trials.len(),
        best.trial,
        best.validation_mse.unwrap_or(f64::NAN)
    );
    mb.manifest.config = json!({ "kind": a.kind, "space": space, "template": model::search_template(&spec, &fit.train)?, "fit": fit, "split": split });
    mb.manifest.seeds = json!({ "strategy": space.strategy, "fit": seeds_json(&fit) });
    mb.manifest.inputs = vec![a.data.data.clone(), a.space.clone()];
    mb.manifest.inputs.extend(a.config.clone());
    mb.manifest.outputs = vec![board_path];
    mb.finish(&a.out)?;
    Ok(0)
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<u8> {
    let mut mb = ManifestBuilder::new("evaluate");
    let trained = load_trained(&a.model)?;
    let dataset = load_data(&a.data)?;
    let profile = dataset
        .get(&a.profile)
        .ok_or_else(|| CliError::Usage(format!("unknown profile '{}'", a.profile)))?;
    let pred = trained.predict_profile(profile)?;
    let report = pred.report()?;
    prepare_out(&a.out)?;
    let mut csv = String::from("t");
    for name in TARGET_NAMES {
        write!(csv, ",{name}_measured,{name}_predicted,{name}_error").expect("string write");
    }
    csv.push('\n');
    let res = pred.residuals();
    for k in 0..pred.len() {
        csv.push_str(&pred.t[k].to_string());
        for j in 0..TARGET_NAMES.len() {
            write!(
                csv,
                ",{},{},{}",
                fmt_f(pred.measured.get(k, j)),
                fmt_f(pred.predicted.get(k, j)),
                fmt_f(res.get(k, j))
            )
            .expect("string write");
        }
        csv.push('\n');
    }
    let pred_path = a.out.join("predictions.csv");
    write_text(&pred_path, &csv)?;
    let metrics_path = a.out.join("metrics.json");
    write_json(&metrics_path, &json!({ "kind": trained.kind(), "profile": a.profile, "report": report }))?;
    if trained.was_trained_on(&a.profile) {
        mb.manifest.evaluated_on_training_profile = true;
        mb.warn(format!("profile {} was part of the model's training data", a.profile));
    }
    for t in &report.targets {
        eprintln!("{:6} mse {:.4} mae {:.4} linf {:.4} r2 {}", t.target, t.mse, t.mae, t.linf, t.r2.map_or("n/a".into(), |r| format!("{r:.4}")));
    }
    mb.manifest.config = json!({ "profile": a.profile, "kind": trained.kind() });
    mb.manifest.inputs = vec![a.model.clone(), a.data.clone()];
    mb.manifest.outputs = vec![metrics_path, pred_path];
    mb.finish(&a.out)?;
    Ok(0)
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult<u8> {
    let mut mb = ManifestBuilder::new("calibrate");
    let cfg = MonitorConfig {
        k: a.k,
        persistence: a.persistence as usize,
        floor: a.floor,
        mode: a.mode.into(),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let trained = load_trained(&a.model)?;
    let dataset = load_data(&a.data)?;
    let profiles = select(&dataset, &a.profiles)?;
    let overlap: Vec<&str> = profiles.iter().map(|p| p.id.as_str()).filter(|id| trained.was_trained_on(id)).collect();
    if !overlap.is_empty() {
        mb.warn(format!("calibrating on training profiles {overlap:?} underestimates healthy residuals"));
    }
    let policy = monitor::calibrate(&trained, &profiles, &cfg)?;
    prepare_out(&a.out)?;
    let path = a.out.join("policy.json");
    write_json(&path, &policy)?;
    for (t, thr) in policy.targets.iter().zip(&policy.thresholds) {
        eprintln!("{t:6} threshold {thr:.3} °C");
    }
    mb.manifest.config = serde_json::to_value(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    mb.manifest.inputs = vec![a.model.clone(), a.data.clone()];
    mb.manifest.outputs = vec![path];
    mb.finish(&a.out)?;
    Ok(0)
}

pub fn monitor(a: &MonitorArgs) -> CliResult<u8> {
    let mut mb = ManifestBuilder::new("monitor");
    let trained = load_trained(&a.model)?;
    let policy: AlertPolicy =
        serde_json::from_value(read_json(&a.policy)?).map_err(|e| CliError::Usage(format!("policy: {e}")))?;
    policy.validate()?;
    let dataset = load_data(&a.data)?;
    let profiles = select(&dataset, &a.profiles)?;
    prepare_out(&a.out)?;
    let mut alerts = String::new();
    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut n_events = 0;
    for profile in profiles {
        let run = monitor::run_monitor(&trained, &policy, profile)?;
        for ev in &run.events {
            let mut line = serde_json::to_value(ev).map_err(|e| CliError::Runtime(e.to_string()))?;
            line["profile"] = json!(profile.id);
            alerts.push_str(&serde_json::to_string(&line).map_err(|e| CliError::Runtime(e.to_string()))?);
            alerts.push('\n');
        }
        n_events += run.events.len();
        eprintln!("{}: {} alert event(s)", profile.id, run.events.len());
        let mut csv = String::from("t");
        for name in &policy.targets {
            write!(csv, ",{name}_measured,{name}_predicted,{name}_residual,{name}_threshold").expect("string write");
        }
        csv.push('\n');
        let tr = &run.trace;
        for k in 0..tr.t.len() {
            csv.push_str(&tr.t[k].to_string());
            for j in 0..policy.targets.len() {
                write!(
                    csv,
                    ",{},{},{},{}",
                    fmt_f(tr.measured.get(k, j)),
                    fmt_f(tr.predicted.get(k, j)),
                    fmt_f(tr.residual.get(k, j)),
                    fmt_f(policy.thresholds[j])
                )
                .expect("string write");
            }
            csv.push('\n');
        }
        let path = a.out.join(format!("residuals_{}.csv", profile.id));
        write_text(&path, &csv)?;
        outputs.push(path);
    }
    let alerts_path = a.out.join("alerts.jsonl");
    write_text(&alerts_path, &alerts)?;
    outputs.insert(0, alerts_path);
    mb.manifest.config = json!({ "policy": policy, "profiles": a.profiles });
    mb.manifest.inputs = vec![a.model.clone(), a.policy.clone(), a.data.clone()];
    mb.manifest.outputs = outputs;
    mb.finish(&a.out)?;
    Ok(if n_events > 0 { EXIT_ALERTS } else { 0 })
}
