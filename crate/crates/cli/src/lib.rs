//! Command-line front end: ingest data, train ensembles, predict, evaluate,
//! compute signatures, run the attribution analysis and self-check.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hydro_ssm::{DataError, EvalError, TrainError};
use thiserror::Error;

pub use commands::{
    cmd_attribute, cmd_evaluate, cmd_ingest_camels, cmd_ingest_synthetic, cmd_predict, cmd_selfcheck, cmd_signatures,
    cmd_train, TrainReport,
};
pub use config::{EvalSection, RunConfig, DATA_DIR_ENV};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("{failed} of {total} ensemble members failed")]
    MembersFailed { failed: usize, total: usize },
    #[error("{0} self-check(s) failed")]
    SelfcheckFailed(usize),
}

impl CliError {
    pub fn io(path: &Path, e: impl ToString) -> Self {
        Self::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        }
    }

    /// 1 for bad input (config, flags, missing or misaligned data), 2 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) | Self::Data(_) => 1,
            Self::Train(TrainError::InvalidConfig(_) | TrainError::Data(_)) => 1,
            Self::Train(TrainError::Model(hydro_ssm::ModelError::InvalidConfig(_))) => 1,
            Self::Eval(
                EvalError::DateMisalignment { .. }
                | EvalError::MissingBasin { .. }
                | EvalError::BasinMismatch { .. }
                | EvalError::Io { .. }
                | EvalError::Empty(_),
            ) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hydro-ssm", version, about = "Diagonal state space models for daily streamflow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw data into the internal data directory layout.
    #[command(subcommand)]
    Ingest(IngestSource),
    /// Train one ensemble member per seed and predict the test period.
    Train(TrainArgs),
    /// Simulate a period with every checkpoint of a run.
    Predict(PredictArgs),
    /// Score predictions against observed streamflow.
    Evaluate(EvaluateArgs),
    /// Hydrologic signatures of observed streamflow.
    Signatures(SignaturesArgs),
    /// Relate skill over a reference model to metric gains and signatures.
    Attribute(AttributeArgs),
    /// Run the built-in numerical checks.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Subcommand)]
pub enum IngestSource {
    /// Convert a CAMELS download.
    Camels(CamelsArgs),
    /// Generate synthetic basins.
    Synthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
pub struct CamelsArgs {
    #[arg(long)]
    pub camels_root: PathBuf,
    /// File with one basin id per line.
    #[arg(long)]
    pub basins: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "nldas")]
    pub forcing_source: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Two basins, three water years, with static attributes.
    TwoBasin,
    /// One two-bucket reservoir basin without attributes.
    Reservoir,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "two-basin")]
    pub preset: Preset,
    #[arg(long, default_value_t = 10)]
    pub years: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// First simulated day of the reservoir preset.
    #[arg(long, default_value = "1990-10-01")]
    pub start: chrono::NaiveDate,
    /// Depth of a weekly precipitation pulse in mm.
    #[arg(long, default_value_t = 0.0)]
    pub weekly_pulse: f64,
    #[arg(long, default_value_t = 0.0)]
    pub missing_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    /// Frequency tuning off.
    S4d,
    /// Frequency tuning as configured.
    S4dFt,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Seeds such as `1,2,5-8`.
    #[arg(long, value_parser = parse_seed_set)]
    pub seed_set: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Do not print per-epoch losses.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Defaults to the run's test period.
    #[arg(long, requires = "end")]
    pub start: Option<chrono::NaiveDate>,
    #[arg(long, requires = "start")]
    pub end: Option<chrono::NaiveDate>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub predictions: Vec<PathBuf>,
    /// Data directory holding `streamflow/`.
    #[arg(long)]
    pub obs_dir: Option<PathBuf>,
    /// Reference-model predictions for skill scores.
    #[arg(long, num_args = 1..)]
    pub reference: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Use `|FHV|` instead of `|FHV - 1|` in the FHV improvement.
    #[arg(long)]
    pub fhv_corrected: bool,
}

#[derive(Debug, Args)]
pub struct SignaturesArgs {
    #[arg(long)]
    pub obs_dir: Option<PathBuf>,
    /// Defaults to `basins.txt` in the data directory.
    #[arg(long)]
    pub basins: Option<PathBuf>,
    #[arg(long, requires = "end")]
    pub start: Option<chrono::NaiveDate>,
    #[arg(long, requires = "start")]
    pub end: Option<chrono::NaiveDate>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub reference_metrics: PathBuf,
    #[arg(long)]
    pub signatures: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub fhv_corrected: bool,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Negate the convolution kernel to prove the equivalence check bites.
    #[arg(long)]
    pub inject_kernel_sign_flip: bool,
}

/// Parse `1,2,5-8` into `[1, 2, 5, 6, 7, 8]`.
pub fn parse_seed_set(s: &str) -> Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty seed range {part}"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(num(part)?),
        }
    }
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(IngestSource::Camels(a)) => cmd_ingest_camels(&a),
        Command::Ingest(IngestSource::Synthetic(a)) => cmd_ingest_synthetic(&a),
        Command::Train(a) => cmd_train(&a).map(|r| {
            println!("trained {} member(s) into {}", r.members.len(), r.output_dir.display());
        }),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Signatures(a) => cmd_signatures(&a),
        Command::Attribute(a) => cmd_attribute(&a),
        Command::Selfcheck(a) => {
            let results = cmd_selfcheck(&a);
            for r in &results {
                println!("{r}");
            }
            match results.iter().filter(|r| !r.passed).count() {
                0 => Ok(()),
                n => Err(CliError::SelfcheckFailed(n)),
            }
        }
    }
}
