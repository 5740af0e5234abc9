use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use tvmix_cli::commands::{cmd_evaluate, cmd_experiment, cmd_separate, cmd_simulate};
use tvmix_cli::config::{Overrides, RunConfig};

/// Separation of moving sound sources with a time-varying mixing model.
#[derive(Parser)]
#[command(name = "tvmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of VEM iterations (overrides the config).
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a moving-source mixture with its ground-truth images.
    Simulate,
    /// Separate a mixture into source images.
    Separate,
    /// Score estimated images against references.
    Evaluate,
    /// Simulate, separate and evaluate, and write a gains table.
    Experiment,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let overrides = Overrides { seed: cli.seed, iterations: cli.iterations, output_dir: cli.output_dir };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Simulate => {
            let manifest = cmd_simulate(&cfg)?;
            println!("{}", manifest.display());
        }
        Command::Separate => {
            let out = cmd_separate(&cfg)?;
            for p in &out.estimates {
                println!("{}", p.display());
            }
        }
        Command::Evaluate => {
            cmd_evaluate(&cfg)?;
        }
        Command::Experiment => {
            cmd_experiment(&cfg)?;
        }
    }
    Ok(())
}
