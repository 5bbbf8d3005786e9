mod commands;
mod config;
mod error;
mod lock;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{compare, evaluate, generate, graphs, pretrain, train};
use crate::config::ConfigFile;
use crate::error::CliError;

/// Joint multi-agent trajectory prediction experiments.
///
/// Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 missing dependency,
/// 4 invalid input or config, 5 training divergence.
#[derive(Debug, Parser)]
#[command(name = "gmop", version)]
struct Cli {
    /// TOML file with one table per command; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes
    Generate(generate::GenerateArgs),
    /// Dump heuristic graphs and their agreement
    Graphs(graphs::GraphsArgs),
    /// Pretrain the autoencoder and/or the interaction classifier
    Pretrain(pretrain::PretrainArgs),
    /// Train a joint model bundle
    Train(train::TrainArgs),
    /// Evaluate a bundle on held-out scenes
    Evaluate(evaluate::EvaluateArgs),
    /// Aggregate evaluated runs per variant
    Compare(compare::CompareArgs),
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate(a) => generate::run(a, &file),
        Command::Graphs(a) => graphs::run(a, &file),
        Command::Pretrain(a) => pretrain::run(a, &file),
        Command::Train(a) => train::run(a, &file),
        Command::Evaluate(a) => evaluate::run(a, &file),
        Command::Compare(a) => compare::run(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::from(CliError::OK),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
