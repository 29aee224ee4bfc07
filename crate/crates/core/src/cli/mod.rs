//! Command-line front end: argument definitions, run directories with
//! manifests, and the subcommands.
//!
//! Exit codes: 0 success, 1 validation or model error, 2 I/O or
//! configuration error.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{FileDigest, RunManifest, MANIFEST_FILE};

use crate::bench::{BenchError, Mode};
use crate::dsl::DslError;
use crate::estimate::{BoundHandling, DEConfig};
use crate::modelspace::ModelError;
use crate::search::{SearchConfig, SearchError};
use crate::simulate::{DataError, Denominator, InputHold, SimError, SolverConfig};

/// Environment variable naming the default root for run directories.
pub const RUN_ROOT_ENV: &str = "PBM_RUN_ROOT";

#[derive(Debug, Parser)]
#[command(name = "pbm", version, about = "Process-based modeling of dynamic systems from libraries and data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Check a library (and optionally a scenario) for errors.
    Validate(ValidateArgs),
    /// Enumerate, fit, validate and rank candidate model structures.
    Identify(IdentifyArgs),
    /// Generate a synthetic two-tank dataset.
    Gendata(GendataArgs),
    /// Simulate one model structure with given parameters.
    Simulate(SimulateArgs),
    /// Run one of the benchmark experiments.
    Experiment(ExperimentArgs),
    /// Re-run a recorded run and compare its artifacts.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    /// Library file.
    pub library: PathBuf,
    /// Scenario file checked against the library.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Print the parsed library (and scenario) as JSON.
    #[arg(long)]
    pub dump_ast: bool,
}

/// Optimizer and solver settings shared by fitting subcommands.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Master seed for the optimizer.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Objective evaluations per free parameter.
    #[arg(long, default_value_t = 50_000)]
    pub budget: usize,
    /// Multiplier on --budget (reduced-budget runs).
    #[arg(long, default_value_t = 1.0)]
    pub budget_scale: f64,
    /// Differential Evolution population size.
    #[arg(long, default_value_t = 60)]
    pub pop_size: usize,
    /// Differential weight.
    #[arg(long = "de-f", default_value_t = 0.9)]
    pub f: f64,
    /// Crossover probability.
    #[arg(long = "de-cr", default_value_t = 0.9)]
    pub cr: f64,
    /// Treatment of trial vectors outside the bounds.
    #[arg(long, value_enum, default_value_t = BoundHandling::Clip)]
    pub bounds: BoundHandling,
    /// Solver absolute tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub abs_tol: f64,
    /// Solver relative tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub rel_tol: f64,
    /// Solver step attempts allowed per sample interval.
    #[arg(long, default_value_t = 100_000)]
    pub max_steps: usize,
    /// Input behavior between samples.
    #[arg(long, value_enum, default_value_t = InputHold::ZeroOrder)]
    pub hold: InputHold,
    /// Denominator of the relative error.
    #[arg(long, value_enum, default_value_t = Denominator::AsPrinted)]
    pub denominator: Denominator,
    /// Output scored on the test segment.
    #[arg(long, default_value = "h2")]
    pub test_output: String,
}

impl FitArgs {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig { abs_tol: self.abs_tol, rel_tol: self.rel_tol, max_steps: self.max_steps, hold: self.hold }
    }

    pub fn search_config(&self) -> SearchConfig {
        let de = DEConfig {
            pop_size: self.pop_size,
            f: self.f,
            cr: self.cr,
            budget_per_param: self.budget,
            seed: self.seed,
            bounds: self.bounds,
        }
        .scaled(self.budget_scale);
        SearchConfig { de, solver: self.solver(), denominator: self.denominator, test_output: self.test_output.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct IdentifyArgs {
    /// Library file.
    #[arg(long)]
    pub library: PathBuf,
    /// Scenario file (single-stage mode).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Stage plan JSON (multi-stage mode).
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Dataset CSV with a leading `t` column.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Single)]
    pub mode: Mode,
    /// Outputs fitted in single-stage mode.
    #[arg(long, value_delimiter = ',', default_value = "h1,h2")]
    pub outputs: Vec<String>,
    /// Train, validation and test sizes; defaults to 1000,500,1000 for
    /// 2500 samples and 2:1:2 otherwise.
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    /// Worker threads [default: available cores].
    #[arg(long)]
    #[serde(skip)]
    pub jobs: Option<usize>,
    /// Run directory [default: $PBM_RUN_ROOT/identify-<time>, or ./runs/...].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GendataArgs {
    /// Noise variance.
    #[arg(long, default_value_t = 0.0)]
    pub variance: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the generated input signal.
    #[arg(long, default_value_t = 0)]
    pub input_seed: u64,
    /// Samples.
    #[arg(long, default_value_t = 2500)]
    pub n: usize,
    /// Sampling interval in seconds.
    #[arg(long, default_value_t = 4.0)]
    pub dt: f64,
    /// Use the voltage column of this CSV instead of generated steps.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Voltage column of --input.
    #[arg(long, default_value = "u")]
    pub input_column: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Structure id.
    #[arg(long, default_value = "S-S")]
    pub model: String,
    /// Parameter values `name=value`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub params: Vec<String>,
    /// Use the ground-truth parameters.
    #[arg(long, conflicts_with = "params")]
    pub ground_truth: bool,
    #[arg(long, default_value_t = 1e-8)]
    pub abs_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub rel_tol: f64,
    #[arg(long, value_enum, default_value_t = InputHold::ZeroOrder)]
    pub hold: InputHold,
    #[arg(long, value_enum, default_value_t = Denominator::AsPrinted)]
    pub denominator: Denominator,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    StructureRecovery,
    ParameterRecovery,
    PowerExponent,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentKind,
    #[arg(long, value_enum, default_value_t = Mode::Single)]
    pub mode: Mode,
    /// Noise variances.
    #[arg(long = "variance", value_delimiter = ',', default_value = "0,0.01,0.02,0.05,0.1,0.2")]
    pub variances: Vec<f64>,
    /// Repetitions per variance (parameter-recovery, power-exponent).
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Seed of the noise and the generated input.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Samples per dataset.
    #[arg(long, default_value_t = 2500)]
    pub n: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    #[serde(skip)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Run directory holding a manifest.
    pub run: PathBuf,
    /// Directory for the replayed artifacts [default: <run>-replay].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Config(String),
    #[error("{path}:{error}")]
    Dsl { path: String, error: DslError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("replay differs in {0:?}")]
    ReplayMismatch(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Dsl { .. } | CliError::Invalid(_) | CliError::Model(_) | CliError::ReplayMismatch(_) => 1,
            CliError::Search(e) => search_code(e),
            CliError::Bench(e) => match e {
                BenchError::Dsl(_) | BenchError::Model(_) | BenchError::GroundTruthFailed(_) | BenchError::NoStructure(_) => 1,
                BenchError::Search(e) => search_code(e),
                _ => 2,
            },
            CliError::Io { .. } | CliError::Config(_) | CliError::Data(_) | CliError::Sim(_) => 2,
        }
    }

    fn io(path: &std::path::Path, source: std::io::Error) -> CliError {
        CliError::Io { path: path.display().to_string(), source }
    }
}

fn search_code(e: &SearchError) -> u8 {
    match e {
        SearchError::Scenario(..)
        | SearchError::Model(_)
        | SearchError::SignalFailed { .. }
        | SearchError::Promotion { .. }
        | SearchError::Plan(_) => 1,
        _ => 2,
    }
}

/// Runs a parsed command line and returns the process exit code, printing
/// diagnostics to stderr.
pub fn run(cli: Cli) -> u8 {
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point of the `pbm` binary.
pub fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(run(Cli::parse()))
}

pub use commands::execute;
