mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use blendscope::pipeline::NoImageMode;
use clap::{Parser, Subcommand};

use commands::CacheAction;
use config::{parse_enum, RunArgs, RunConfig};

/// Exit status for configuration, input and startup errors.
const EXIT_STARTUP: u8 = 2;

/// Interpret combinational designs as a base plus an additive and score the
/// interpretations against gold labels.
#[derive(Debug, Parser)]
#[command(name = "blendscope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Interpret every sample of a dataset and write one result per line.
    Interpret {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a results file against the dataset's gold labels.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "FILE")]
        results: Option<PathBuf>,
        /// Also write the full report as JSON.
        #[arg(long, value_name = "FILE")]
        report_json: Option<PathBuf>,
    },
    /// Per-module accuracy from the traces of a results file.
    Modular {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_name = "FILE")]
        results: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        report_json: Option<PathBuf>,
    },
    /// Compare a run with the image against the same method without it.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// generative | vanilla | relation_pairs
        #[arg(long, value_parser = parse_enum::<NoImageMode>, default_value = "generative")]
        variant: NoImageMode,
        /// Directory for the two result files.
        #[arg(long, value_name = "DIR")]
        results_dir: Option<PathBuf>,
    },
    /// Inspect or clear the response cache.
    Cache {
        #[command(flatten)]
        run: RunArgs,
        #[arg(value_enum)]
        action: CacheAction,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Interpret { run } => commands::cmd_interpret(&RunConfig::resolve(&run)?),
        Command::Evaluate {
            run,
            results,
            report_json,
        } => commands::cmd_evaluate(
            &RunConfig::resolve(&run)?,
            results.as_deref(),
            report_json.as_deref(),
        ),
        Command::Modular {
            run,
            results,
            report_json,
        } => commands::cmd_modular(
            &RunConfig::resolve(&run)?,
            results.as_deref(),
            report_json.as_deref(),
        ),
        Command::Ablate {
            run,
            variant,
            results_dir,
        } => commands::cmd_ablate(&RunConfig::resolve(&run)?, variant, results_dir.as_deref()),
        Command::Cache { run, action } => commands::cmd_cache(&RunConfig::resolve(&run)?, action),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_STARTUP)
        }
    }
}
