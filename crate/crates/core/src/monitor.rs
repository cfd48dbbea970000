//! Residual-based cooling-fault monitor.
//!
//! A threshold per target is calibrated on healthy data as
//! `mean(|r|) + k · std(|r|)` (floored), and an alert event opens once the
//! residual stays above it for `persistence` consecutive samples.

use serde::{Deserialize, Serialize};

use crate::dataio::{Profile, TARGET_NAMES};
use crate::error::{Error, Result};
use crate::model::TemperatureEstimator;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    /// `|measured − predicted|`.
    Absolute,
    /// `measured − predicted`: only underestimation (running hotter than
    /// expected) can alert.
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub k: f64,
    /// Consecutive samples (seconds at 1 Hz) above threshold before an alert.
    pub persistence: usize,
    /// Lower bound of every threshold, °C.
    pub floor: f64,
    pub mode: ResidualMode,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            k: 4.0,
            persistence: 60,
            floor: 0.5,
            mode: ResidualMode::Absolute,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::Config(format!("k = {} must be > 0", self.k)));
        }
        if self.persistence == 0 {
            return Err(Error::Config("persistence must be ≥ 1".into()));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::Config(format!("threshold floor {} must be ≥ 0", self.floor)));
        }
        Ok(())
    }
}

/// Healthy residual statistics behind a policy, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub k: f64,
    pub floor: f64,
    /// Mean of the (absolute or signed) healthy residual per target.
    pub mean: Vec<f64>,
    /// Population std of the same.
    pub std: Vec<f64>,
    pub n_samples: usize,
    pub profiles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertPolicy {
    pub targets: Vec<String>,
    /// °C per target.
    pub thresholds: Vec<f64>,
    pub persistence: usize,
    pub mode: ResidualMode,
    pub calibration: Calibration,
}

impl AlertPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.targets.len() != self.thresholds.len() {
            return Err(Error::Shape(format!(
                "{} targets vs {} thresholds",
                self.targets.len(),
                self.thresholds.len()
            )));
        }
        for (t, &thr) in self.targets.iter().zip(&self.thresholds) {
            if !(thr > 0.0 && thr.is_finite()) {
                return Err(Error::DegenerateThreshold {
                    target: t.clone(),
                    threshold: thr,
                });
            }
        }
        if self.persistence == 0 {
            return Err(Error::Config("persistence must be ≥ 1".into()));
        }
        Ok(())
    }

    fn score(&self, r: f64) -> f64 {
        match self.mode {
            ResidualMode::Absolute => r.abs(),
            ResidualMode::Signed => r,
        }
    }
}

fn target_name(j: usize) -> String {
    TARGET_NAMES.get(j).map_or_else(|| format!("target_{j}"), |s| s.to_string())
}

/// Policy from a `samples × targets` matrix of healthy residuals.
pub fn calibrate_residuals(residuals: &Matrix, cfg: &MonitorConfig) -> Result<AlertPolicy> {
    cfg.validate()?;
    let (n, k) = residuals.shape();
    if n == 0 {
        return Err(Error::InvalidInput("no healthy residuals to calibrate on".into()));
    }
    let mut mean = vec![0.0; k];
    let mut std = vec![0.0; k];
    let mut thresholds = vec![0.0; k];
    let mut targets = Vec::with_capacity(k);
    for j in 0..k {
        let col: Vec<f64> = residuals
            .column(j)
            .into_iter()
            .map(|r| if cfg.mode == ResidualMode::Absolute { r.abs() } else { r })
            .collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        mean[j] = m;
        std[j] = s;
        thresholds[j] = (m + cfg.k * s).max(cfg.floor);
        targets.push(target_name(j));
        if !(thresholds[j] > 0.0) {
            return Err(Error::DegenerateThreshold {
                target: target_name(j),
                threshold: thresholds[j],
            });
        }
    }
    Ok(AlertPolicy {
        targets,
        thresholds,
        persistence: cfg.persistence,
        mode: cfg.mode,
        calibration: Calibration {
            k: cfg.k,
            floor: cfg.floor,
            mean,
            std,
            n_samples: n,
            profiles: Vec::new(),
        },
    })
}

/// Calibrates on every frame the estimator can nowcast in the healthy
/// profiles. Those profiles should not have been used for training.
pub fn calibrate(estimator: &impl TemperatureEstimator, healthy: &[&Profile], cfg: &MonitorConfig) -> Result<AlertPolicy> {
    if healthy.is_empty() {
        return Err(Error::InvalidInput("calibration needs at least one healthy profile".into()));
    }
    let residuals: Vec<Matrix> = healthy
        .iter()
        .map(|p| estimator.predict_profile(p).map(|pred| pred.residuals()))
        .collect::<Result<_>>()?;
    let mut policy = calibrate_residuals(&Matrix::vstack(&residuals.iter().collect::<Vec<_>>())?, cfg)?;
    policy.calibration.profiles = healthy.iter().map(|p| p.id.clone()).collect();
    Ok(policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub target: String,
    /// Time of the first sample of the exceedance run, s.
    pub onset_t: i64,
    /// Time at which the event was raised (persistence satisfied), s.
    pub raised_t: i64,
    /// Residual with the largest score during the event, °C.
    pub peak_residual: f64,
    /// Samples above threshold, s.
    pub duration_s: usize,
    /// The profile ended while the event was still active.
    pub open: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    pub t: Vec<i64>,
    pub measured: Matrix,
    pub predicted: Matrix,
    pub residual: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRun {
    /// Events ordered by target, then onset.
    pub events: Vec<AlertEvent>,
    pub trace: ResidualTrace,
}

impl MonitorRun {
    pub fn has_alerts(&self) -> bool {
        !self.events.is_empty()
    }
}

/// Single causal pass over a residual trace.
pub fn detect_events(t: &[i64], residuals: &Matrix, policy: &AlertPolicy) -> Result<Vec<AlertEvent>> {
    policy.validate()?;
    if residuals.rows() != t.len() || residuals.cols() != policy.thresholds.len() {
        return Err(Error::Shape(format!(
            "trace {:?} vs {} timestamps and {} thresholds",
            residuals.shape(),
            t.len(),
            policy.thresholds.len()
        )));
    }
    let mut events = Vec::new();
    for (j, &thr) in policy.thresholds.iter().enumerate() {
        let mut run_start: Option<usize> = None;
        let mut peak = 0.0f64;
        let close = |start: usize, end: usize, peak: f64, open: bool, events: &mut Vec<AlertEvent>| {
            if end - start >= policy.persistence {
                events.push(AlertEvent {
                    target: policy.targets[j].clone(),
                    onset_t: t[start],
                    raised_t: t[start + policy.persistence - 1],
                    peak_residual: peak,
                    duration_s: end - start,
                    open,
                });
            }
        };
        for i in 0..t.len() {
            let r = residuals.get(i, j);
            if policy.score(r) > thr {
                if run_start.is_none() {
                    run_start = Some(i);
                    peak = r;
                } else if policy.score(r) > policy.score(peak) {
                    peak = r;
                }
            } else if let Some(s) = run_start.take() {
                close(s, i, peak, false, &mut events);
            }
        }
        if let Some(s) = run_start {
            close(s, t.len(), peak, true, &mut events);
        }
    }
    Ok(events)
}

pub fn run_monitor(estimator: &impl TemperatureEstimator, policy: &AlertPolicy, profile: &Profile) -> Result<MonitorRun> {
    policy.validate()?;
    if profile.len() < estimator.seq_len() {
        return Err(Error::InvalidInput(format!(
            "profile {} has {} samples, the model needs {}",
            profile.id,
            profile.len(),
            estimator.seq_len()
        )));
    }
    let pred = estimator.predict_profile(profile)?;
    let residual = pred.residuals();
    let events = detect_events(&pred.t, &residual, policy)?;
    Ok(MonitorRun {
        events,
        trace: ResidualTrace {
            t: pred.t,
            measured: pred.measured,
            predicted: pred.predicted,
            residual,
        },
    })
}
