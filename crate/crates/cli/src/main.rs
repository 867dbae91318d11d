//! `copi`: train, evaluate, compress, and inspect decorrelated networks.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CompressOpts, ConfigFile, EvalOpts, FeaturesOpts, LabOpts, TrainOpts};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "copi",
    version,
    about = "Constrained parameter inference for feedforward networks"
)]
struct Cli {
    /// TOML file with a table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train networks and write checkpoints and metrics.
    Train(TrainOpts),
    /// Print accuracy and loss of a checkpoint.
    Eval(EvalOpts),
    /// Replace trailing layers with linear readouts.
    Compress(CompressOpts),
    /// Render decorrelated inputs and per-layer feature maps as PGM grids.
    Features(FeaturesOpts),
    /// Compare lateral rules under input rescaling.
    DecorrLab(LabOpts),
}

fn run(cli: Cli) -> CliResult<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(o) => commands::cmd_train(o.overlay(file.train).resolve()),
        Command::Eval(o) => commands::cmd_eval(o.overlay(file.eval).resolve()),
        Command::Compress(o) => commands::cmd_compress(o.overlay(file.compress).resolve()),
        Command::Features(o) => commands::cmd_features(o.overlay(file.features).resolve()),
        Command::DecorrLab(o) => commands::cmd_decorr_lab(o.overlay(file.decorr_lab).resolve()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
