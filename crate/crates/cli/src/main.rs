//! `lyapunov`: exponents, lookup tables, simulations and critical
//! initializations for deep Leaky-ReLU networks.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lyapunov_core::EnsembleKind;

/// Exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] lyapunov_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use lyapunov_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                E::Domain(_) | E::Usage(_) => EXIT_USAGE,
                E::Accuracy { .. } | E::Internal(_) | E::Json(_) => EXIT_NUMERICAL,
                E::Io(_) => EXIT_IO,
            },
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "lyapunov",
    version,
    about = "Lyapunov exponents of deep Leaky-ReLU networks"
)]
pub struct Cli {
    /// Worker threads for Monte-Carlo work (results do not depend on it).
    #[arg(long, global = true, env = "LYAPUNOV_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form exponent and critical scales for one configuration.
    Exponent(ExponentArgs),
    /// Lookup table over a list of widths.
    Table(TableArgs),
    /// Monte-Carlo experiment.
    Simulate(SimulateArgs),
    /// Write a critically initialized weight stack.
    Init(InitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ensemble {
    Gaussian,
    Orthogonal,
}

impl From<Ensemble> for EnsembleKind {
    fn from(e: Ensemble) -> Self {
        match e {
            Ensemble::Gaussian => EnsembleKind::Gaussian,
            Ensemble::Orthogonal => EnsembleKind::Orthogonal,
        }
    }
}

/// A literal scale, or one of the named scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Value(f64),
    Crit,
    He,
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "crit" => Ok(Scale::Crit),
            "he" => Ok(Scale::He),
            other => match other.parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => Ok(Scale::Value(v)),
                _ => Err(format!(
                    "expected a positive number, `crit` or `he`, got `{s}`"
                )),
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct ExponentArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub ensemble: Ensemble,
    /// sigma or eta: a number, `crit` or `he`.
    #[arg(long, default_value = "1")]
    pub scale: Scale,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Md,
    Json,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long)]
    pub alpha: f64,
    /// Comma-separated widths; defaults to the standard 35-width list.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: TableFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Deep-network estimate of the exponent.
    Lln,
    /// Normalized log-norm samples and their moments.
    Clt,
    /// One-layer estimate of the exponent.
    SingleStep,
    /// Moments of the direction chain after `--depth` steps.
    Stationarity,
    /// ReLU runs absorbed at the origin.
    ReluZero,
    /// Positive-weight counterexample; `--scale` is the upper bound `a`.
    PositiveCone,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Weight ensemble (gaussian unless given).
    #[arg(long, value_enum)]
    pub ensemble: Option<Ensemble>,
    #[arg(long, default_value = "1")]
    pub scale: Scale,
    /// Layers (chain steps for stationarity).
    #[arg(long, default_value_t = 100)]
    pub depth: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Master seed; drawn from entropy and recorded when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON record destination (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-trial values (lln, single-step) or normalized samples (clt) as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Log,
    Linear,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub depth: usize,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub kind: Ensemble,
    /// Pick the best of several candidate stacks.
    #[arg(long)]
    pub sampled: bool,
    /// Candidate count (default ceil(2 sqrt(depth))).
    #[arg(long, requires = "sampled")]
    pub candidates: Option<usize>,
    #[arg(long, requires = "sampled", default_value_t = 256)]
    pub probe_inputs: usize,
    /// `sphere`, `box:LO:HI`, or `file:PATH` with a JSON list of vectors.
    #[arg(long, requires = "sampled", default_value = "sphere")]
    pub input_dist: String,
    #[arg(long, value_enum, requires = "sampled", default_value = "log")]
    pub metric: Metric,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
