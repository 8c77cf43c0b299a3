//! `pdc`: file-driven forecasting, clustering and simulation pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Generate,
    Train,
    Predict,
    Cluster,
    Evaluate,
    Simulate,
    Pipeline,
}

#[derive(Debug, Parser)]
#[command(
    name = "pdc",
    version,
    about = "Predict-then-cluster pipeline for meal-delivery zones"
)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `--set clustering.method=threshold`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let ctx = config::load(&cli.config, cli.seed, &cli.overrides)?;
    match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Predict => commands::predict(&ctx),
        Command::Cluster => commands::cluster(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Pipeline => {
            if ctx.config.synthetic.is_some() && ctx.config.paths.orders.is_none() {
                commands::generate(&ctx)?;
            }
            commands::train(&ctx)?;
            commands::predict(&ctx)?;
            commands::cluster(&ctx)?;
            commands::evaluate(&ctx)?;
            commands::simulate(&ctx)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
