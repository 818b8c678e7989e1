//! `vsp`: velocity-selective pumping simulations driven by a TOML configuration.
//!
//! Exit status: 0 success, 1 output failure, 2 configuration error,
//! 3 ingestion error, 4 numeric failure.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::output::{Outputs, RunInfo};

#[derive(Parser)]
#[command(
    name = "vsp",
    version,
    about = "Velocity-selective optical pumping in warm alkali vapours"
)]
struct Cli {
    /// Caps the number of worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulated OD spectrum after the pump-back plus the unpumped baseline.
    Spectrum { config: PathBuf },
    /// Coherence decay, dephasing time and memory lifetime per ladder.
    Dephasing { config: PathBuf },
    /// Ladder lifetime table with and without velocity selection.
    Predict { config: PathBuf },
    /// Fit pump-back power, linewidth and velocity class to a measured spectrum.
    Fit { config: PathBuf },
    /// Fit the two-exponential relaxation model to a transmission series.
    FitRelaxation { config: PathBuf },
    /// Pump-back power x duration grid.
    Sweep { config: PathBuf },
}

impl Command {
    fn parts(&self) -> (&'static str, &PathBuf) {
        match self {
            Command::Spectrum { config } => ("spectrum", config),
            Command::Dephasing { config } => ("dephasing", config),
            Command::Predict { config } => ("predict", config),
            Command::Fit { config } => ("fit", config),
            Command::FitRelaxation { config } => ("fit-relaxation", config),
            Command::Sweep { config } => ("sweep", config),
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let start = Instant::now();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let (name, path) = cli.command.parts();
    let cfg = LoadedConfig::load(path)?;
    let mut out = Outputs::create(cfg.output_dir())?;
    let species = match &cli.command {
        Command::Spectrum { .. } => commands::spectrum(&cfg, &mut out)?,
        Command::Dephasing { .. } => commands::dephasing(&cfg, &mut out)?,
        Command::Predict { .. } => commands::predict(&cfg, &mut out)?,
        Command::Fit { .. } => commands::fit(&cfg, &mut out)?,
        Command::FitRelaxation { .. } => commands::fit_relaxation_cmd(&cfg, &mut out)?,
        Command::Sweep { .. } => commands::sweep(&cfg, &mut out)?,
    };
    let written = out.files().len();
    let dir = out.dir().to_path_buf();
    out.finish(&RunInfo {
        command: name,
        species: &species.name,
        config_path: &cfg.path,
        config_text: &cfg.text,
        threads: rayon::current_num_threads(),
        runtime: start.elapsed(),
    })?;
    eprintln!("vsp {name}: wrote {} files to {}", written + 1, dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vsp: {e}");
            e.exit_code()
        }
    }
}
