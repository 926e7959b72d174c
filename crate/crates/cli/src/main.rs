//! `scaleout` — desk-scale synchronous data-parallel SGD runner.
//!
//! Exit codes: 0 success, 2 configuration error, 3 training divergence,
//! 4 transport failure, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scaleout_core::Error;

use commands::TrainOverrides;

#[derive(Parser)]
#[command(name = "scaleout", version, about = "Synchronous data-parallel SGD at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model per a run-config file.
    Train {
        /// Path to the TOML run config.
        #[arg(long)]
        config: PathBuf,
        /// Override the worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the per-worker batch size.
        #[arg(long)]
        local_batch: Option<usize>,
        /// Override the transport: in-process or tcp.
        #[arg(long)]
        transport: Option<String>,
        /// This worker's listen address (tcp transport).
        #[arg(long)]
        listen: Option<String>,
        /// Comma-separated listen addresses of all workers, rank order
        /// (tcp transport).
        #[arg(long, value_delimiter = ',')]
        peers: Option<Vec<String>>,
        /// Require bit-reproducible reductions.
        #[arg(long)]
        deterministic: Option<bool>,
        /// Override the output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Evaluate saved parameters on the config's validation split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Path to a .params file.
        #[arg(long)]
        params: PathBuf,
    },
    /// Score snapshots and their probability-mean ensemble.
    EnsembleEval {
        #[arg(long)]
        config: PathBuf,
        /// Directory of snapshot .params/.json pairs.
        #[arg(long)]
        snapshots: PathBuf,
    },
    /// Project time-to-accuracy from a calibration table.
    Project {
        /// Builtin table name (stampede2, marenostrum4) or a CSV path.
        #[arg(long)]
        table: String,
        #[arg(long)]
        workers: u32,
        #[arg(long)]
        local_batch: u32,
        /// Top-1 target in percent (75.5, 76.0, 76.5).
        #[arg(long)]
        target: f64,
        /// Images per epoch behind the table.
        #[arg(long)]
        dataset_size: Option<u64>,
    },
    /// Dump the configured schedule as CSV.
    ScheduleDump {
        #[arg(long)]
        config: PathBuf,
        /// Sample every N iterations.
        #[arg(long, default_value_t = 1)]
        stride: u64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> scaleout_core::Result<()> {
    match cli.command {
        Command::Train {
            config,
            workers,
            local_batch,
            transport,
            listen,
            peers,
            deterministic,
            output_dir,
        } => commands::cmd_train(
            &config,
            TrainOverrides {
                workers,
                local_batch,
                transport,
                listen,
                peers,
                deterministic,
                output_dir,
            },
        ),
        Command::Eval { config, params } => commands::cmd_eval(&config, &params),
        Command::EnsembleEval { config, snapshots } => {
            commands::cmd_ensemble_eval(&config, &snapshots)
        }
        Command::Project {
            table,
            workers,
            local_batch,
            target,
            dataset_size,
        } => commands::cmd_project(&table, workers, local_batch, target, dataset_size),
        Command::ScheduleDump { config, stride, out } => {
            commands::cmd_schedule_dump(&config, stride, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) | Error::Schedule(_) => {
                    ExitCode::from(2)
                }
                Error::Diverged { .. } => ExitCode::from(3),
                Error::Transport(_) => ExitCode::from(4),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
