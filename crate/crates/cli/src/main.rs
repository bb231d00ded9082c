//! `posecheck` command-line front-end.

mod commands;
mod config;
mod fail;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::Loaded;
use crate::fail::Fail;

#[derive(Parser)]
#[command(name = "posecheck", version, about = "Validate 6-dof pose estimates with a two-stream classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stream {
    Depth,
    Cloud,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Radius, diameter, Λ eigenvalues and a symmetry check of the object.
    MeshInfo {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate the balanced training and validation splits.
    MakeDataset {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Symmetry-aware distance between two poses (inline JSON or files).
    Distance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Render the object at one or more poses to DPR and PGM files.
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "pose", required = true)]
        poses: Vec<String>,
        /// Output path without extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the depth and/or point-cloud stream on the training split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        stream: Stream,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Annotate a split with both stream outputs and the fused verdict.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
        /// Also write accepted/rejected mask images per scene.
        #[arg(long)]
        overlays: bool,
    },
    /// ACA/OA and AP before/after confidence replacement on an annotated split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "val")]
        split: String,
    },
    /// Aggregate per-object reports into one table.
    Report {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Fail> {
    match cli.command {
        Command::MeshInfo { config } => commands::mesh_info(&Loaded::read(&config)?),
        Command::MakeDataset { config, seed } => {
            let mut l = Loaded::read(&config)?;
            if let Some(s) = seed {
                l.config.seed = s;
            }
            commands::make_dataset(&l)
        }
        Command::Distance { config, a, b } => commands::distance(&Loaded::read(&config)?, &a, &b),
        Command::Render { config, poses, out } => commands::render(&Loaded::read(&config)?, &poses, out),
        Command::Train { config, stream, seed } => {
            let mut l = Loaded::read(&config)?;
            if let Some(s) = seed {
                l.config.train.seed = s;
            }
            commands::train(&l, stream)
        }
        Command::Infer {
            config,
            split,
            overlays,
        } => commands::infer(&Loaded::read(&config)?, &split, overlays),
        Command::Evaluate { config, split } => commands::evaluate(&Loaded::read(&config)?, &split),
        Command::Report { inputs, out } => commands::report(&inputs, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg.replace('\n', " "));
            ExitCode::from(e.stage.code())
        }
    }
}
