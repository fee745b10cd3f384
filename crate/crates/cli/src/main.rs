//! Command line runner for the least favorable analysis and Monte Carlo harness.

mod config;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, ScenarioConfig};
use pipeline::{InStage, Stage, StageError};

#[derive(Parser)]
#[command(name = "drkf", version, about = "Distributed robust Kalman filtering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analysis (and optionally Monte Carlo) and write CSV outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; also seeds the network unless the config fixes it.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of Monte Carlo runs; 0 disables the simulation pass.
        #[arg(long = "mc-runs")]
        mc_runs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check observability, weights and dimensions without running the analysis.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, StageError> {
    ScenarioConfig::load(path)
        .and_then(|c| c.resolve(overrides))
        .stage(Stage::Config)
}

fn execute(command: Command) -> Result<bool, StageError> {
    match command {
        Command::Run {
            config,
            seed,
            mc_runs,
            out,
        } => {
            let overrides = Overrides {
                seed,
                mc_runs,
                output_dir: out,
            };
            let cfg = load(&config, &overrides)?;
            let output = pipeline::run(&cfg, |line| eprintln!("drkf: {line}"))?;
            for s in &output.manifest.steady {
                println!("{:<14} {}", s.variant, pipeline::fmt_number(s.msd));
            }
            println!("outputs written to {}", output.dir.display());
            Ok(true)
        }
        Command::Validate { config } => {
            let cfg = load(&config, &Overrides::default())?;
            let scenario = pipeline::build_scenario(&cfg)?;
            let checks = pipeline::validate(&cfg, &scenario);
            for c in &checks {
                let mark = if c.passed { "ok  " } else { "FAIL" };
                println!("{mark} {}{}", c.name, if c.detail.is_empty() { String::new() } else { format!(": {}", c.detail) });
            }
            let ok = checks.iter().all(|c| c.passed);
            if !ok {
                eprintln!("drkf: [validation] some checks failed");
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("drkf: {e}");
            ExitCode::FAILURE
        }
    }
}
