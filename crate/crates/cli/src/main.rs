//! `thermoguard` command-line entry point.
//!
//! Exit codes: 0 success (monitor: healthy), 1 runtime error, 2 monitor
//! raised alerts, 64 usage error, 66 input data unreadable.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thermoguard::model::ModelKind;
use thermoguard::monitor::ResidualMode;

pub const EXIT_ERROR: u8 = 1;
pub const EXIT_ALERTS: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_NO_INPUT: u8 = 66;

#[derive(Parser, Debug)]
#[command(name = "thermoguard", version, about = "Induction-machine temperature estimation and cooling-fault monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic telemetry profiles from the thermal network.
    Simulate(SimulateArgs),
    /// Train one model on a leave-one-profile-out split.
    Train(TrainArgs),
    /// Hyperparameter search over a JSON space.
    Search(SearchArgs),
    /// Score a model on one profile and write predictions.
    Evaluate(EvaluateArgs),
    /// Fit an alert policy on healthy profiles.
    Calibrate(CalibrateArgs),
    /// Run the residual monitor over profiles.
    Monitor(MonitorArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Number of profiles.
    #[arg(long, default_value_t = 18, value_parser = clap::value_parser!(u32).range(1..))]
    pub profiles: u32,
    /// Duration of each profile in hours.
    #[arg(long, default_value_t = 8.0)]
    pub hours: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Std of Gaussian measurement noise on the temperatures, °C.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Fan blockage as FRACTION@ONSET_SECONDS, e.g. 0.7@10800.
    #[arg(long, value_parser = parse_fault)]
    pub fault: Option<(f64, f64)>,
    /// Plant parameters as JSON (defaults to the built-in 15 kW machine).
    #[arg(long)]
    pub plant: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Directory of profile CSVs (or a single CSV).
    #[arg(long)]
    pub data: PathBuf,
    /// Profile held out for testing.
    #[arg(long)]
    pub test_profile: String,
    /// Number of validation profiles.
    #[arg(long, default_value_t = 2)]
    pub validation: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub kind: ModelKind,
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON file with `model` (hyperparameters) and `fit` (spans, training) sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long)]
    pub kind: ModelKind,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the space's budget.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub budget: Option<u64>,
    /// Switches the space to random sampling with this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Profile to evaluate on.
    #[arg(long)]
    pub profile: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Healthy profiles; all profiles in the directory by default.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub profiles: Vec<String>,
    #[arg(long, default_value_t = 4.0)]
    pub k: f64,
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
    pub persistence: u64,
    #[arg(long, default_value_t = 0.5)]
    pub floor: f64,
    #[arg(long, value_enum, default_value = "absolute")]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MonitorArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Alert policy written by `calibrate`.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Profiles to monitor; all by default.
    #[arg(long, value_delimiter = ',')]
    pub profiles: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Absolute,
    Signed,
}

impl From<ModeArg> for ResidualMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Absolute => ResidualMode::Absolute,
            ModeArg::Signed => ResidualMode::Signed,
        }
    }
}

fn parse_fault(s: &str) -> Result<(f64, f64), String> {
    let (frac, onset) = s.split_once('@').ok_or("expected FRACTION@ONSET_SECONDS, e.g. 0.7@10800")?;
    let frac: f64 = frac.trim().parse().map_err(|_| format!("bad blockage fraction '{frac}'"))?;
    let onset: f64 = onset.trim().parse().map_err(|_| format!("bad onset '{onset}'"))?;
    if !(0.0..=1.0).contains(&frac) {
        return Err(format!("blockage fraction {frac} outside [0, 1]"));
    }
    if !(onset >= 0.0 && onset.is_finite()) {
        return Err(format!("onset {onset} must be ≥ 0"));
    }
    Ok((frac, onset))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Search(a) => commands::search(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Monitor(a) => commands::monitor(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
