//! Command-line driver for the two-stage variscan pipeline: simulation,
//! Stage-1 clustering, Stage-2 regression, prediction, evaluation and
//! plot-ready reports.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, CliResult};

/// Stream ids derived from the run seed.
pub mod streams {
    pub const SIMULATION: u64 = 0;
    pub const STAGE1: u64 = 1;
    pub const CONFIGURATION: u64 = 2;
    pub const STAGE2: u64 = 3;
}

#[derive(Debug, Parser)]
#[command(name = "variscan", version, about = "Bidirectional covariate clustering and spline regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// seed for every random stream of the run
    #[arg(long)]
    pub seed: Option<u64>,
    /// override a configuration value, e.g. `stage1.burn_in=500`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clustered covariates with a truth sidecar
    SimulateClusters {
        #[command(flatten)]
        common: Common,
    },
    /// Censored survival outcomes on low-correlation predictors
    SimulateSurvival {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        beta_star: Option<f64>,
        /// covariate CSV used instead of the block-correlated generator
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Stage 1: allocation, latent configuration, co-clustering, discount trace
    FitStage1 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        covariates: PathBuf,
        /// continue from the checkpoint in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Stage 2: selection report, ω trace, nonlinearity measure
    FitStage2 {
        #[command(flatten)]
        common: Common,
        /// Stage-1 output directory
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Stage 1 then Stage 2 into `<out>/stage1` and `<out>/stage2`
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        covariates: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        resume: bool,
    },
    /// Posterior predictions for test covariates
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        covariates: PathBuf,
    },
    /// κ against a true allocation and/or concordance error of predictions
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        allocation: Option<PathBuf>,
        #[arg(long)]
        outcomes: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Long-format CSVs for cluster sizes, discount density and error rates
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// `label=path` of an evaluation table; repeatable
        #[arg(long = "evaluation", value_name = "LABEL=PATH")]
        evaluations: Vec<String>,
    },
}

/// Parse `argv` (program name first), run the subcommand and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    use commands as c;
    match command {
        Command::SimulateClusters { common } => c::simulate_clusters(&common),
        Command::SimulateSurvival { common, beta_star, source } => {
            c::simulate_survival(&common, beta_star, source.as_deref())
        }
        Command::FitStage1 { common, covariates, resume } => c::fit_stage1(&common, &covariates, resume),
        Command::FitStage2 { common, stage1, outcomes, resume } => {
            c::fit_stage2(&common, &stage1, &outcomes, resume)
        }
        Command::Fit { common, covariates, outcomes, resume } => c::fit(&common, &covariates, &outcomes, resume),
        Command::Predict { common, stage1, stage2, covariates } => {
            c::predict(&common, &stage1, &stage2, &covariates)
        }
        Command::Evaluate { common, truth, allocation, outcomes, predictions } => c::evaluate(
            &common,
            truth.as_deref(),
            allocation.as_deref(),
            outcomes.as_deref(),
            predictions.as_deref(),
        ),
        Command::Report { common, stage1, stage2, truth, evaluations } => {
            c::report(&common, &stage1, stage2.as_deref(), truth.as_deref(), &evaluations)
        }
    }
}
