use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::commands::CliError;

/// Record of one command run, written as `manifest.json` beside its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub evaluated_on_training_profile: bool,
    pub duration_s: f64,
}

pub struct ManifestBuilder {
    started: Instant,
    pub manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                argv: std::env::args().collect(),
                config: Value::Null,
                seeds: Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                warnings: Vec::new(),
                evaluated_on_training_profile: false,
                duration_s: 0.0,
            },
        }
    }

    pub fn warn(&mut self, message: String) {
        eprintln!("warning: {message}");
        self.manifest.warnings.push(message);
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<(), CliError> {
        self.manifest.duration_s = self.started.elapsed().as_secs_f64();
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}
