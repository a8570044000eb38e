//! `spfl` — run federated-uplink experiments and allocation solves from the
//! shell.  See the library modules for the file formats; this binary only
//! parses arguments, wires paths together, and prints what happened.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use spfl_cli::config_text::{load_config, serialize_config};
use spfl_cli::report::config_fingerprint;
use spfl_cli::{coeffs, driver};
use spfl_core::allocator::BandwidthMethod;

/// Output directory used when neither `--out` nor `SPFL_OUT_DIR` is given.
const DEFAULT_OUT_DIR: &str = "spfl-out";

#[derive(Parser)]
#[command(
    name = "spfl",
    about = "Simulator for sign-prioritized federated learning over fading uplinks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep and write metrics CSVs.
    Run {
        /// Experiment file; `key = value` lines, empty file for defaults.
        #[arg(long)]
        config: PathBuf,
        /// Worker cap for concurrent sweep cells (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (default: $SPFL_OUT_DIR, then ./spfl-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one allocation instance from a coefficients file.
    Solve {
        /// Instance file: channel overrides plus `device = A B C D distance`.
        #[arg(long)]
        coeffs: PathBuf,
        /// Bandwidth subproblem solver: sca or penalty.
        #[arg(long, default_value = "penalty")]
        method: String,
        /// Alternation stall tolerance.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Parse and validate a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            workers,
            out,
        } => {
            let parsed = load_config(&config)?;
            let out_dir = out
                .or_else(|| std::env::var_os("SPFL_OUT_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
            let output = driver::run_to_dir(&parsed, workers, &out_dir)?;
            for file in &output.files {
                println!("wrote {}", file.display());
            }
            println!(
                "{} cells, {} files, output in {}",
                output.cells,
                output.files.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Solve {
            coeffs: path,
            method,
            tol,
        } => {
            let method = BandwidthMethod::parse(&method)
                .ok_or_else(|| anyhow::anyhow!("unknown method `{method}`; valid: sca, penalty"))?;
            let instance = coeffs::load_instance(&path)?;
            let report = coeffs::solve(&instance, method, tol)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::Validate { config } => {
            let parsed = load_config(&config)?;
            let fingerprint = config_fingerprint(&serialize_config(&parsed));
            println!(
                "ok: {} devices, {} rounds, {} repetitions, {} sweep cells, config_sha256={}",
                parsed.num_devices,
                parsed.rounds,
                parsed.repetitions,
                parsed.strategies.len() * parsed.sweep_values.len(),
                fingerprint
            );
            Ok(())
        }
    }
}
