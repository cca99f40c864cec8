//! `ddgcn`: train, evaluate, gradient-check and inspect skeleton action models.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
//! gradient-check failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load_config, Resolved};
use error::CliResult;

#[derive(Parser)]
#[command(
    name = "ddgcn",
    version,
    about = "Skeleton action recognition over directed kinematic graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set train.base_lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<Resolved> {
        load_config(&self.config, &self.overrides)?.resolve()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and write history CSV plus checkpoint under the output directory.
    Train(ConfigArgs),
    /// Print top-1 accuracy; a second checkpoint enables joint+bone fusion.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Bone-stream checkpoint for fusion.
        #[arg(long)]
        checkpoint2: Option<PathBuf>,
    },
    /// Finite-difference check of every layer and a small model.
    Gradcheck(ConfigArgs),
    /// Print subset labels and normalized masked adjacency matrices.
    InspectPartition {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write them as CSV under the output directory.
        #[arg(long)]
        csv: bool,
    },
    /// Copy or merge history CSVs.
    ExportMetrics {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(args) => commands::train(&args.resolve()?),
        Command::Eval {
            config,
            checkpoint,
            checkpoint2,
        } => commands::eval(&config.resolve()?, &checkpoint, checkpoint2.as_deref()),
        Command::Gradcheck(args) => commands::gradcheck(&args.resolve()?),
        Command::InspectPartition { config, csv } => commands::inspect_partition(&config.resolve()?, csv),
        Command::ExportMetrics { inputs, out } => commands::export_metrics(&inputs, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
