//! `rkhs-embed`: simulate the estimator, trace the invariant orbit, run the
//! convergence study and sample the error field, all from one TOML config.
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 configuration error,
//! 3 numerical failure (divergence, conditioning, open orbit, slope fit).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Failure, EXIT_CONFIG};
use config::{RunConfig, DEFAULT_TOML};

#[derive(Parser)]
#[command(name = "rkhs-embed", version, about = "RKHS-embedded estimator and convergence harness")]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the canonical default configuration and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one estimator simulation; writes trajectory.csv and simulate_summary.json.
    Simulate,
    /// Trace the orbit Φ = level; writes manifold.csv and prints L and the closure gap.
    Trace,
    /// Convergence study over N for each kernel order; writes rates.csv and report.json.
    Rates,
    /// Error field |f - fhat| on a grid; writes contour.csv.
    Contour,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.print_defaults {
        print!("{DEFAULT_TOML}");
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::config("no command given; see --help"));
    };
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::config)?,
        None => RunConfig::default(),
    };
    let out = commands::out_dir(&cfg, cli.out);
    match command {
        Command::Simulate => commands::simulate_cmd(&cfg, &out),
        Command::Trace => commands::trace_cmd(&cfg, &out),
        Command::Rates => commands::rates_cmd(&cfg, &out),
        Command::Contour => commands::contour_cmd(&cfg, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = if f.code == EXIT_CONFIG { "config error" } else { "error" };
            eprintln!("{kind}: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
