//! Telemetry datasets: CSV profiles, leave-one-profile-out splits and the
//! model container.

mod container;
mod telemetry;

pub use container::{load_model, read_model, save_model, write_model, CONTAINER_VERSION, MAGIC};
pub use telemetry::{export_dataset, export_profile, load_dataset, load_profile, CSV_HEADER};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of estimated temperatures (winding, DE bearing, NDE bearing).
pub const N_TARGETS: usize = 3;
/// Number of model inputs (speed, current, reference temperature).
pub const N_INPUTS: usize = 3;

pub const INPUT_NAMES: [&str; N_INPUTS] = ["n_m", "I_m", "T_ref"];
pub const TARGET_NAMES: [&str; N_TARGETS] = ["T_W", "T_DE", "T_NDE"];

/// One 1 Hz telemetry sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    /// Seconds since profile start.
    pub t: i64,
    /// Motor speed, rpm.
    pub n_m: f64,
    /// Motor current (RMS), A.
    pub i_m: f64,
    /// Shell (reference) temperature, °C.
    pub t_ref: f64,
    /// Winding temperature, °C.
    pub t_w: f64,
    /// Drive-end bearing temperature, °C.
    pub t_de: f64,
    /// Non-drive-end bearing temperature, °C.
    pub t_nde: f64,
}

impl TelemetryFrame {
    pub fn inputs(&self) -> [f64; N_INPUTS] {
        [self.n_m, self.i_m, self.t_ref]
    }

    pub fn targets(&self) -> [f64; N_TARGETS] {
        [self.t_w, self.t_de, self.t_nde]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let all = [self.n_m, self.i_m, self.t_ref, self.t_w, self.t_de, self.t_nde];
        if all.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if self.n_m < 0.0 {
            return Err(format!("negative speed {}", self.n_m));
        }
        if self.i_m < 0.0 {
            return Err(format!("negative current {}", self.i_m));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsClass {
    Slow,
    Medium,
    Fast,
}

impl DynamicsClass {
    pub const ALL: [DynamicsClass; 3] = [Self::Slow, Self::Medium, Self::Fast];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Slow => "slow",
            Self::Medium => "medium",
            Self::Fast => "fast",
        }
    }
}

impl fmt::Display for DynamicsClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DynamicsClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "slow" => Ok(Self::Slow),
            "medium" => Ok(Self::Medium),
            "fast" => Ok(Self::Fast),
            other => Err(Error::InvalidInput(format!("unknown dynamics class {other:?}"))),
        }
    }
}

/// A contiguous 1 Hz recording under one operating profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub id: String,
    pub dynamics: DynamicsClass,
    pub frames: Vec<TelemetryFrame>,
}

impl Profile {
    /// Checks the frame invariants: non-empty, contiguous 1 s time grid,
    /// finite temperatures and non-negative speed and current.
    pub fn new(id: impl Into<String>, dynamics: DynamicsClass, frames: Vec<TelemetryFrame>) -> Result<Self> {
        let id = id.into();
        if frames.is_empty() {
            return Err(Error::InvalidInput(format!("profile {id} has no frames")));
        }
        for (k, pair) in frames.windows(2).enumerate() {
            if pair[1].t != pair[0].t + 1 {
                return Err(Error::InvalidInput(format!(
                    "profile {id}: non-contiguous time at frame {}",
                    k + 1
                )));
            }
        }
        for (k, f) in frames.iter().enumerate() {
            f.validate()
                .map_err(|m| Error::InvalidInput(format!("profile {id}, frame {k}: {m}")))?;
        }
        Ok(Self { id, dynamics, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Input series as `[n_m, I_m, T_ref]` columns.
    pub fn input_columns(&self) -> [Vec<f64>; N_INPUTS] {
        [
            self.frames.iter().map(|f| f.n_m).collect(),
            self.frames.iter().map(|f| f.i_m).collect(),
            self.frames.iter().map(|f| f.t_ref).collect(),
        ]
    }

    /// Target series as `[T_W, T_DE, T_NDE]` columns.
    pub fn target_columns(&self) -> [Vec<f64>; N_TARGETS] {
        [
            self.frames.iter().map(|f| f.t_w).collect(),
            self.frames.iter().map(|f| f.t_de).collect(),
            self.frames.iter().map(|f| f.t_nde).collect(),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub profiles: Vec<Profile>,
}

impl Dataset {
    pub fn new(profiles: Vec<Profile>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &profiles {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate profile id {}", p.id)));
            }
        }
        Ok(Self { profiles })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Profile> {
        self.profiles.iter().find(|p| p.id == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.profiles.iter().map(|p| p.id.as_str()).collect()
    }

    /// Profiles for the given ids, in the order requested.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Profile>> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown profile id {id}")))
            })
            .collect()
    }
}

/// Train / validation / test partition of profile ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn test_id(&self) -> &str {
        &self.test[0]
    }
}

/// One split per profile with that profile held out for testing. Validation
/// ids are the lexicographically smallest `n_validation` ids other than the
/// test id; the rest train.
pub fn make_lopo_splits(dataset: &Dataset, n_validation: usize) -> Result<Vec<Split>> {
    if dataset.len() < n_validation + 2 {
        return Err(Error::InvalidInput(format!(
            "{} profiles cannot provide {n_validation} validation, 1 test and at least 1 training profile",
            dataset.len()
        )));
    }
    let mut sorted: Vec<&str> = dataset.ids();
    sorted.sort_unstable();
    Ok(dataset
        .ids()
        .into_iter()
        .map(|test| {
            let validation: Vec<String> = sorted
                .iter()
                .filter(|id| **id != test)
                .take(n_validation)
                .map(|s| s.to_string())
                .collect();
            let train = dataset
                .ids()
                .into_iter()
                .filter(|id| *id != test && !validation.iter().any(|v| v == id))
                .map(str::to_string)
                .collect();
            Split {
                train,
                validation,
                test: vec![test.to_string()],
            }
        })
        .collect())
}

/// The leave-one-profile-out split that holds out `test_id`.
pub fn lopo_split_for(dataset: &Dataset, n_validation: usize, test_id: &str) -> Result<Split> {
    make_lopo_splits(dataset, n_validation)?
        .into_iter()
        .find(|s| s.test_id() == test_id)
        .ok_or_else(|| Error::InvalidInput(format!("unknown test profile {test_id}")))
}
