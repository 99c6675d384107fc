//! `coordx fit|bench|decompose|render --config <path> [--set key=value ...]`

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coordx::Error;

use config::{Command, RunConfig};

#[derive(Parser)]
#[command(name = "coordx", version, about = "Fit, benchmark, decompose and render coordinate MLPs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `train.epochs=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root of the per-run output directories.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model on a signal.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Train on sampled decomposable batches from the `sampler` block.
        #[arg(long)]
        accelerated: bool,
    },
    /// Compare baseline and split inference cost over grid extents.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Export per-branch features of a split checkpoint.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Slice or ray-march a 3D checkpoint.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Budget { .. } | Error::Json(_) | Error::UseOpCountRatio => 2,
        Error::Divergence { .. } | Error::Task(_) | Error::Dimension(_) => 3,
        Error::Io(_) | Error::Parse(_) => 4,
    }
}

fn configure_threads() -> coordx::Result<()> {
    match std::env::var("COORDX_THREADS") {
        Ok(v) => {
            let n = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("COORDX_THREADS must be a positive integer, got `{v}`")))?;
            coordx::exec::set_threads(n)
        }
        Err(_) => Ok(()),
    }
}

fn run(cli: Cli) -> coordx::Result<PathBuf> {
    configure_threads()?;
    let (cmd, common, checkpoint, accelerated) = match cli.cmd {
        Cmd::Fit { common, accelerated } => (Command::Fit, common, None, accelerated),
        Cmd::Bench { common } => (Command::Bench, common, None, false),
        Cmd::Decompose { common, checkpoint } => (Command::Decompose, common, checkpoint, false),
        Cmd::Render { common, checkpoint } => (Command::Render, common, checkpoint, false),
    };
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.set)?;
    if let Some(dir) = common.out_dir {
        cfg.io.out_dir = dir;
    }
    if checkpoint.is_some() {
        cfg.io.checkpoint = checkpoint;
    }
    cfg.validate(cmd)?;
    match cmd {
        Command::Fit => commands::fit(&cfg, accelerated),
        Command::Bench => commands::bench(&cfg),
        Command::Decompose => commands::decompose(&cfg),
        Command::Render => commands::render(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
