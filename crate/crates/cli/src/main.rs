//! `dapper`: train, evaluate and inspect dynamic author-persona topic models.

mod eval;
mod export;
mod generate;
mod run;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dapper_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "dapper",
    version,
    about = "Dynamic author-persona topic models"
)]
struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and write checkpoints, report and manifest to a run directory.
    Train(train::TrainArgs),
    /// Per-word log-likelihood of a held-out corpus under a trained model.
    Eval(eval::EvalArgs),
    /// Top words per topic and persona trajectories as tab-separated files.
    Export(export::ExportArgs),
    /// Sample a synthetic corpus with its ground truth.
    Generate(generate::GenerateArgs),
}

/// A failure with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::NotImplemented(_) => 1,
            Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Data(_)
            | Error::Dimension(_)
            | Error::Checkpoint(_)
            | Error::Io { .. } => 2,
            Error::Aborted(_) | Error::Domain(_) | Error::InvalidNatural { .. } => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Train(args) => train::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Export(args) => export::run(args),
        Command::Generate(args) => generate::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
