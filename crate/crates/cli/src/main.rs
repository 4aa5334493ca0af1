//! `polband`: coverage studies, single-dataset analysis and scenario curves.

mod commands;
mod config;
mod format;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input files (exit 2).
    Usage(String),
    /// Statistical or runtime failure (exit 1).
    Runtime(String),
}

impl From<polband_core::Error> for CliError {
    fn from(e: polband_core::Error) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "polband", version, about = "Confidence intervals for the subsidiary value of primary-optimal policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo coverage study on a built-in scenario.
    Study(StudyArgs),
    /// Intervals for a dataset read from CSV.
    Analyze(AnalyzeArgs),
    /// True value curves of a scenario as CSV, or a sample drawn from it.
    ScenarioCurves(CurvesArgs),
}

#[derive(Args, Debug, Clone)]
struct InferenceArgs {
    /// Overall miscoverage level.
    #[arg(long)]
    alpha: Option<f64>,
    /// First-stage share of the miscoverage level; must be below alpha.
    #[arg(long)]
    beta: Option<f64>,
    /// Multiplier bootstrap replicates.
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cross-fitting folds for the one-step methods (0 fits in-sample).
    #[arg(long)]
    folds: Option<usize>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// How the one-step methods learn the primary-optimal policy.
    #[arg(long, value_enum, default_value_t = Learner::Class)]
    learner: Learner,
    /// TOML file with nuisance, estimator and band settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Learner {
    /// Best policy of the class by estimated primary value.
    Class,
    /// Sign of the estimated primary effect, unrestricted.
    PlugIn,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Thresholds in 1D; optimizer budget and approximate lattice size in 3D.
    #[arg(long, default_value_t = 2000)]
    grid: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Correlation of the two outcome noises.
    #[arg(long)]
    noise_corr: Option<f64>,
    /// Quadrature points for the true range (default depends on dimension).
    #[arg(long)]
    integration_points: Option<usize>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full JSON report (next to --out, else to stderr).
    #[arg(long)]
    verbose: bool,
    #[command(flatten)]
    inference: InferenceArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ClassArg {
    /// Thresholds on the first feature.
    Threshold,
    /// Boxes `x >= a` on the first three features.
    Box,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Dataset CSV with columns x1..xd, a, y_star, y_dag.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ClassArg::Threshold)]
    class: ClassArg,
    /// Thresholds, or optimizer budget and approximate lattice size for boxes.
    #[arg(long, default_value_t = 2000)]
    grid: usize,
    /// JSON destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    inference: InferenceArgs,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[arg(long)]
    scenario: String,
    /// Number of curve points.
    #[arg(long, default_value_t = 201)]
    resolution: usize,
    #[arg(long)]
    integration_points: Option<usize>,
    #[arg(long)]
    noise_corr: Option<f64>,
    /// Write a simulated dataset of N rows from SEED instead of the curves.
    #[arg(long, num_args = 2, value_names = ["N", "SEED"])]
    emit_sample: Option<Vec<u64>>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("POLBAND_THREADS") else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|t| *t >= 1)
        .ok_or_else(|| CliError::Usage(format!("POLBAND_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Study(args) => commands::study(args),
        Command::Analyze(args) => commands::analyze(args),
        Command::ScenarioCurves(args) => commands::scenario_curves(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
