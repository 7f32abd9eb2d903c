//! `hypergs`: benchmark, fit, render and inspect HyperGaussian models.
//!
//! Every subcommand takes an optional JSON config (`--config`) whose
//! top-level keys may be overridden with repeated `--set key=value`.
//! Exit status is 0 on success, 1 on a runtime failure and 2 on a config
//! error.

mod commands;
mod config;
mod help;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hypergs", version, about = "HyperGaussian conditioning, fitting and rendering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time naive vs. fast conditioning and report working memory.
    #[command(after_help = help::keys(help::BENCH))]
    Bench(RunArgs),
    /// Fit a latent-conditioned model to a synthetic dynamic scene.
    #[command(after_help = help::keys(help::FIT))]
    Fit(RunArgs),
    /// Render frames of a fitted checkpoint to PPM.
    #[command(after_help = help::keys(help::RENDER))]
    Render(RunArgs),
    /// Check hand-written gradients against central differences.
    #[command(after_help = help::keys(help::GRADCHECK))]
    Gradcheck(RunArgs),
    /// Render per-primitive uncertainty of a fitted checkpoint.
    #[command(after_help = help::keys(help::UNCERTAINTY))]
    Uncertainty(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a top-level config key; the value is parsed as JSON when possible.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Bench(a) => ("bench", a),
        Command::Fit(a) => ("fit", a),
        Command::Render(a) => ("render", a),
        Command::Gradcheck(a) => ("gradcheck", a),
        Command::Uncertainty(a) => ("uncertainty", a),
    };
    let result = config::load(args.config.as_deref(), &args.set)
        .map_err(commands::CliError::Config)
        .and_then(|obj| match &cli.command {
            Command::Bench(_) => commands::bench(obj),
            Command::Fit(_) => commands::fit(obj),
            Command::Render(_) => commands::render(obj),
            Command::Gradcheck(_) => commands::gradcheck(obj),
            Command::Uncertainty(_) => commands::uncertainty(obj),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Config(e)) => {
            eprintln!("hypergs {name}: config error: {e:#}");
            ExitCode::from(2)
        }
        Err(commands::CliError::Runtime(e)) => {
            eprintln!("hypergs {name}: {e:#}");
            ExitCode::from(1)
        }
    }
}
