//! `uavfl` command-line front end.
//!
//! Exit codes: 0 when every run completed, 1 on configuration or I/O
//! errors, 2 when a run stopped because a cluster ran out of battery, 3 when
//! training diverged.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use uavfl_core::config::load_config;
use uavfl_core::driver::{run_experiment, run_sweep, summarize_csv, SweepGrid};

#[derive(Parser)]
#[command(name = "uavfl", version, about = "Cluster-based federated learning simulator for UAV fleets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its logs under the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `fleet.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every point of a parameter grid over a base config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a round-record CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<i32> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.fleet.seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let outcome = run_experiment(&cfg)?;
            let text = std::fs::read_to_string(&outcome.files.summary_json)
                .with_context(|| format!("reading {}", outcome.files.summary_json.display()))?;
            write!(stdout, "{text}")?;
            if outcome.exit_code() != 0 {
                log::warn!("{} ended early: {:?}", outcome.run_id, outcome.status);
            }
            Ok(outcome.exit_code())
        }
        Command::Sweep { config, grid, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let grid = SweepGrid::load(&grid)?;
            let report = run_sweep(&cfg, &grid)?;
            report.write_csv(&mut stdout)?;
            Ok(report.exit_code())
        }
        Command::Summarize { input } => {
            let summary = summarize_csv(&input)?;
            serde_json::to_writer_pretty(&mut stdout, &summary)?;
            writeln!(stdout)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UAVFL_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
