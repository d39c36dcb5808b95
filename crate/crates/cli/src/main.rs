//! `assistopt`: simulate logs, ingest them, estimate effects, train and
//! evaluate bandit policies, scan for heterogeneous effects and serve
//! trained policies.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "assistopt", version, about = "Assistance-policy optimization toolkit")]
pub struct Cli {
    /// Master seed for simulation, cross-validation folds and forests.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// JSON run configuration (world, evaluation and scan settings).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Minimum exposures per action for a question to be eligible.
    #[arg(long, global = true)]
    pub min_samples: Option<usize>,
    /// Weight on reattempt correctness in the combined reward.
    #[arg(long = "weights", global = true)]
    pub w1: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Interaction log (JSONL).
    #[arg(long)]
    pub logs: PathBuf,
    /// Item parameter file (JSONL with question_id, a, b, c).
    #[arg(long)]
    pub items: PathBuf,
    /// Catalog JSON declaring each question's action set.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a world and write its logs, items and catalog.
    Simulate {
        #[arg(long)]
        sessions: usize,
        /// Policy spec files to serve inside the simulation; uniform random
        /// when none are given.
        #[arg(long = "spec")]
        specs: Vec<PathBuf>,
        /// Assignment weights as `policy_id=weight`, comma separated.
        #[arg(long)]
        mix: Option<String>,
    },
    /// Validate logs and print the filter summary.
    Ingest {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
    /// Per-question action effect estimates (effects.csv).
    Effects(DataArgs),
    /// Train the bandit policy and write its spec file.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        p_threshold: Option<f64>,
        #[arg(long, default_value = "mab")]
        policy_id: String,
    },
    /// Repeated k-fold offline evaluation (evaluation.csv).
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        p_threshold: Option<f64>,
    },
    /// Reward-weight sweep (pareto.csv).
    Pareto(DataArgs),
    /// Linear and forest heterogeneity tests (linear_hte.csv, forest_hte.csv).
    HteScan {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        p_threshold: Option<f64>,
    },
    /// Contextual policy against the bandit choice (cb_compare.csv).
    CbCompare {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        p_threshold: Option<f64>,
    },
    /// Answer assistance queries, one JSON object per line.
    Serve {
        #[arg(long = "spec", required = true)]
        specs: Vec<PathBuf>,
        #[arg(long)]
        mix: Option<String>,
        /// TCP address; stdin/stdout when absent.
        #[arg(long)]
        listen: Option<String>,
        /// Append decisions to this JSONL file.
        #[arg(long)]
        decision_log: Option<PathBuf>,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
