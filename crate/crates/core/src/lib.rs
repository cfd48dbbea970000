//! Thermal state estimation for induction machines from drive-side signals
//! (speed, current, shell temperature), with residual-based detection of
//! cooling faults.
//!
//! Layers, bottom up: [`simulate`] produces synthetic telemetry, [`dataio`]
//! loads and splits it, [`features`] builds standardized EWMA windows, the
//! three estimators live in [`linmodel`], [`cnnmodel`] and [`rnnmodel`],
//! [`train`] fits and searches them, [`model`] bundles a fitted estimator
//! with its input pipeline and [`monitor`] turns it into an alarm.

pub mod activation;
pub mod cnnmodel;
pub mod dataio;
pub mod error;
pub mod features;
pub mod linmodel;
pub mod metrics;
pub mod model;
pub mod monitor;
pub mod rng;
pub mod rnnmodel;
pub mod simulate;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
