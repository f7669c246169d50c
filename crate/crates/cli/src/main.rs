use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iflow_core::process::ProcessKind;

mod commands;
mod config;
mod error;
mod svg;

use commands::{EvalArgs, OracleArgs, SampleArgs, TraceArgs, TrainArgs};
use config::Overrides;
use error::{CliError, EXIT_CONFIG};

/// Train, sample and evaluate one-step Integration Flow models.
#[derive(Parser)]
#[command(name = "iflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.iterations`.
        #[arg(long)]
        iterations: Option<u64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Draw samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        count: usize,
        /// Refinement steps (network evaluations per sample).
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Use EMA weights.
        #[arg(long)]
        ema: bool,
        /// Fail unless the checkpoint was trained for this process.
        #[arg(long)]
        process: Option<ProcessKind>,
        /// Run config; when given, samples are mapped back to data coordinates.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compute metrics of a checkpoint against its run config's held-out data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated: energy_distance, straightness, bilipschitz,
        /// conditioning_ablation.
        #[arg(long, value_delimiter = ',', default_value = "energy_distance")]
        metrics: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `eval.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Trace one sample along its straight noise-to-data path (rf only).
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        times: usize,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long)]
        ema: bool,
    },
    /// Compare the model with Euler solutions of the analytic VE ODE.
    OracleCompare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated Euler step counts.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        steps: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `eval.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("IFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("IFLOW_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("IFLOW_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Train {
            config,
            seed,
            iterations,
            output_dir,
        } => commands::train(&TrainArgs {
            config,
            overrides: Overrides {
                seed,
                iterations,
                output_dir,
            },
        }),
        Command::Sample {
            checkpoint,
            count,
            steps,
            seed,
            out,
            ema,
            process,
            config,
        } => commands::sample_cmd(&SampleArgs {
            checkpoint,
            count,
            steps,
            seed,
            out,
            ema,
            process,
            config,
        }),
        Command::Eval {
            checkpoint,
            config,
            metrics,
            out,
            seed,
        } => commands::eval(&EvalArgs {
            checkpoint,
            config,
            metrics,
            out,
            seed,
        }),
        Command::Trace {
            checkpoint,
            out,
            seed,
            times,
            steps,
            ema,
        } => commands::trace_cmd(&TraceArgs {
            checkpoint,
            out,
            seed,
            times,
            steps,
            ema,
        }),
        Command::OracleCompare {
            config,
            checkpoint,
            steps,
            out,
            seed,
        } => commands::oracle_compare(&OracleArgs {
            config,
            checkpoint,
            steps,
            out,
            seed,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
