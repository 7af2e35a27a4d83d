//! `sobl`: fit, tune, inspect and benchmark sparse ordinal discriminant bases
//! from CSV files.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sobl::pipeline::{Scoring, TuningMethod};
use sobl::simbench::{MethodSpec, ModelKind};
use sobl::{MethodVariant, WeightMethod};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "sobl", version, about = "Sparse ordinal basis learning")]
struct Cli {
    /// Worker threads for folds and replicates (default: all cores).
    #[arg(long, global = true, env = "SOBL_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a basis and classifier at a fixed (lambda, eta).
    Fit(FitArgs),
    /// Classify new observations with a fitted model.
    Predict(PredictArgs),
    /// Per-variable ordinal weights and their statistics.
    Weights(WeightsArgs),
    /// Choose (lambda, eta) by cross-validation, then fit.
    Tune(TuneArgs),
    /// Monte-Carlo benchmark on a built-in model.
    Simulate(SimulateArgs),
    /// Population quantities of a built-in model as JSON.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Serialize, Clone)]
pub struct DataArgs {
    /// Headered CSV; every column other than the label is a predictor.
    #[arg(long)]
    pub data: PathBuf,
    /// Column holding integer labels 1..K in class order.
    #[arg(long, default_value = "label")]
    pub label_col: String,
    /// Rescale predictors to unit sample standard deviation.
    #[arg(long)]
    pub standardize: bool,
    /// Keep only the m predictors with the largest ANOVA F statistics.
    #[arg(long)]
    pub screen: Option<usize>,
}

#[derive(Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, default_value = "mgsda")]
    pub variant: MethodVariant,
    #[arg(long, default_value = "two-step")]
    pub weights: WeightMethod,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    /// Ridge as a multiple of the mean diagonal of the covariance estimate.
    #[arg(long, default_value_t = sobl::pipeline::DEFAULT_RIDGE_FACTOR)]
    pub ridge: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct PredictArgs {
    /// model.json written by `fit` or `tune`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Predictions CSV. Losses and the manifest go to `<stem>.losses.json` and
    /// `<stem>.manifest.json` beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Column of true labels; enables the loss report.
    #[arg(long)]
    pub truth: Option<String>,
}

#[derive(Args, Serialize)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, default_value = "two-step")]
    pub method: WeightMethod,
    /// Weights CSV; the manifest goes to `<stem>.manifest.json` beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, default_value = "mgsda")]
    pub variant: MethodVariant,
    #[arg(long, default_value = "two-step")]
    pub weights: WeightMethod,
    #[arg(long, default_value = "two-step")]
    pub mode: TuningMethod,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Number of lambda values on the log grid ending at lambda_max.
    #[arg(long, default_value_t = 50)]
    pub grid_size: usize,
    /// Explicit lambda grid for `--mode grid`.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Explicit eta grid for `--mode grid`.
    #[arg(long, value_delimiter = ',')]
    pub eta_grid: Option<Vec<f64>>,
    #[arg(long, default_value = "accuracy")]
    pub scoring: Scoring,
    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = sobl::pipeline::DEFAULT_RIDGE_FACTOR)]
    pub ridge: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: ModelKind,
    /// Number of variables (ignored by example1).
    #[arg(long, default_value_t = 200)]
    pub p: usize,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "ord-MGSDA,ord-MGSDA-grid,MGSDA")]
    pub methods: Vec<MethodSpec>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training observations per class.
    #[arg(long, default_value_t = 50)]
    pub train_per_class: usize,
    /// Test observations per class (default: same as training).
    #[arg(long)]
    pub test_per_class: Option<usize>,
    /// Variant whose population basis defines the discriminant variables.
    #[arg(long, default_value = "mgsda")]
    pub taxonomy_variant: MethodVariant,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 50)]
    pub grid_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 200)]
    pub p: usize,
    #[arg(long, default_value = "mgsda")]
    pub variant: MethodVariant,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    /// Class sizes of the label vector used for the expected Kendall tau.
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Also write diagnostics.json and manifest.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Weights(a) => commands::weights(&a),
        Command::Tune(a) => commands::tune(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Input(first.to_string()).to_json_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
