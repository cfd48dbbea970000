//! Regression metrics: MSE, MAE, L-infinity and R².

use serde::{Deserialize, Serialize};

use crate::dataio::TARGET_NAMES;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!(
            "{} measured vs {} predicted samples",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("metric of an empty series".into()));
    }
    Ok(())
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    let ss: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ss / y.len() as f64)
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / y.len() as f64)
}

pub fn linf(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// `1 - SS_res / SS_tot`. Negative when the prediction is worse than the mean.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    if y.len() < 2 {
        return Err(Error::UndefinedMetric("R² needs at least two samples"));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R² of a constant series"));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub target: String,
    pub mse: f64,
    pub mae: f64,
    pub linf: f64,
    /// `None` when the measured series is constant.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    /// Mean over targets.
    pub mse: f64,
    /// Mean over targets.
    pub mae: f64,
    /// Max over targets.
    pub linf: f64,
    /// Mean over targets with a defined R².
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub targets: Vec<TargetMetrics>,
    pub aggregate: AggregateMetrics,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn target(&self, name: &str) -> Option<&TargetMetrics> {
        self.targets.iter().find(|t| t.target == name)
    }
}

/// Per-column metrics for `samples × targets` matrices.
pub fn report(y: &Matrix, yhat: &Matrix) -> Result<MetricsReport> {
    if y.shape() != yhat.shape() {
        return Err(Error::Shape(format!(
            "measured {:?} vs predicted {:?}",
            y.shape(),
            yhat.shape()
        )));
    }
    let mut targets = Vec::with_capacity(y.cols());
    for j in 0..y.cols() {
        let (a, b) = (y.column(j), yhat.column(j));
        let r2 = match r_squared(&a, &b) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        targets.push(TargetMetrics {
            target: TARGET_NAMES
                .get(j)
                .map_or_else(|| format!("target_{j}"), |s| s.to_string()),
            mse: mse(&a, &b)?,
            mae: mae(&a, &b)?,
            linf: linf(&a, &b)?,
            r2,
        });
    }
    let k = targets.len() as f64;
    let defined: Vec<f64> = targets.iter().filter_map(|t| t.r2).collect();
    let aggregate = AggregateMetrics {
        mse: targets.iter().map(|t| t.mse).sum::<f64>() / k,
        mae: targets.iter().map(|t| t.mae).sum::<f64>() / k,
        linf: targets.iter().fold(0.0, |m, t| m.max(t.linf)),
        r2: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
    };
    Ok(MetricsReport {
        targets,
        aggregate,
        n_samples: y.rows(),
    })
}
