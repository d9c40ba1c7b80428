//! Command-line harness tying generation, training, evaluation, probing,
//! attribution and sweep experiments into reproducible config-driven runs.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime failure,
//! 3 failed acceptance check in `report`.

mod commands;
mod config;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// An error carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub exit: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            exit: 1,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            exit: 2,
            message: message.into(),
        }
    }

    pub fn check_failed(message: impl Into<String>) -> Self {
        Self {
            exit: 3,
            message: message.into(),
        }
    }
}

impl From<deconf::Error> for CliError {
    fn from(e: deconf::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "deconf",
    version,
    about = "Train nuisance-invariant classifiers on synthetic confounded data and diagnose score-nuisance dependence"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the source/target dataset pair described by a config file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides run.out_dir in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured strategy on previously generated datasets and
    /// write per-replicate models and metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override run.master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override run.replicates.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Train a probe to predict the nuisance from a saved model's scores.
    Probe {
        model: PathBuf,
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Expected Gradients attributions for one sample of a dataset.
    Attribute {
        model: PathBuf,
        data: PathBuf,
        /// Row index of the sample to explain.
        #[arg(long)]
        index: usize,
        #[arg(long, default_value_t = 2000)]
        n_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Standard-train across engineered base-rate imbalance ratios and
    /// record target AUROC and probe AUROC per ratio.
    SweepImbalance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Join all metric files of a run into one summary and gate on its
    /// recorded checks.
    Report { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; they are not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config, out } => commands::generate::run(&config, out.as_deref()),
        Command::Train {
            config,
            out,
            seed,
            replicates,
        } => commands::train::run(&config, out.as_deref(), seed, replicates),
        Command::Probe {
            model,
            data,
            out,
            seed,
        } => commands::probe::run(&model, &data, &out, seed),
        Command::Attribute {
            model,
            data,
            index,
            n_samples,
            seed,
            out,
        } => commands::attribute::run(&model, &data, index, n_samples, seed, &out),
        Command::SweepImbalance {
            config,
            out,
            seed,
            replicates,
        } => commands::sweep::run(&config, out.as_deref(), seed, replicates),
        Command::Report { run_dir } => commands::report::run(&run_dir),
    }
}
