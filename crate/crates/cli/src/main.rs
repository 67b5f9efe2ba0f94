//! Batch front end for the cell-population simulator: run experiments from a
//! JSON config, or replay a manifest and verify byte-identical outputs.

mod config;
mod manifest;
mod outputs;
mod parallel;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "lysim", version, about = "Branching cell-population simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 means one per core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a manifest and verify the outputs are byte-identical.
    Replay {
        manifest: PathBuf,
        /// Output directory; defaults to `<manifest dir>/replay`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 means one per core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
}

fn run(
    config_path: &PathBuf,
    out: Option<PathBuf>,
    workers: usize,
    seed: Option<u64>,
) -> Result<u8> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let mut config: ExperimentConfig = match serde_json::from_str(&text) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("config parse error: {e}");
            return Ok(EXIT_VALIDATION);
        }
    };
    if let Some(seed) = seed {
        config.numerics.master_seed = seed;
    }
    if let Err(e) = config.validate() {
        eprintln!("{e}");
        return Ok(EXIT_VALIDATION);
    }
    let out_dir = out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("lysim-out-{}", config.experiment.name())));
    let outcome = pipeline::run_experiment(&config, &out_dir, workers)?;
    println!("wrote {}", outcome.out_dir.display());
    if outcome.partial {
        eprintln!("warning: partial results (cell cap or mean-field explosion); see manifest");
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn replay(manifest_path: &PathBuf, out: Option<PathBuf>, workers: usize) -> Result<u8> {
    let out_dir = out.unwrap_or_else(|| {
        manifest_path
            .parent()
            .unwrap_or_else(|| std::path::Path::new("."))
            .join("replay")
    });
    let (outcome, identical) = pipeline::replay(manifest_path, &out_dir, workers)?;
    if identical {
        println!("replay verified: outputs byte-identical");
    } else {
        println!("outputs differ from the manifest; treating this as a fresh run");
    }
    println!("wrote {}", outcome.out_dir.display());
    if outcome.partial {
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            workers,
            seed,
        } => run(&config, out, workers, seed),
        Command::Replay {
            manifest,
            out,
            workers,
        } => replay(&manifest, out, workers),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
