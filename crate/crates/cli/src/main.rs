use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rhc_core::experiment::{
    run_experiment, run_sweep, theory_report, theory_report_json, write_run, write_sweep, ExperimentConfig,
};

/// Environment variable holding the worker thread count for sweeps.
const THREADS_ENV: &str = "RHC_THREADS";

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;

#[derive(Parser)]
#[command(name = "rhc", version, about = "Receding horizon stabilization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the receding horizon loop once and write state.csv, controls.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every horizon in the config's sweep list and write table.csv and sweep.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the stability constants as JSON.
    Theory {
        #[arg(long)]
        config: PathBuf,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    ExperimentConfig::from_path(path).map_err(|e| fail(EXIT_CONFIG, e))
}

fn out_dir(cli: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf, ExitCode> {
    cli.or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| fail(EXIT_CONFIG, "no output directory: pass --out or set output_dir"))
}

fn configure_threads() -> Result<(), ExitCode> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| fail(EXIT_CONFIG, format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| fail(EXIT_CONFIG, e))
}

fn execute(command: Command) -> Result<ExitCode, ExitCode> {
    match command {
        Command::Run { config, out } => {
            let cfg = load(&config)?;
            let dir = out_dir(out, &cfg)?;
            let artifacts = run_experiment(&cfg).map_err(|e| fail(EXIT_SOLVER, e))?;
            write_run(&artifacts, &dir).map_err(|e| fail(EXIT_SOLVER, e))?;
            match &artifacts.summary.failure {
                Some(f) => Err(fail(EXIT_SOLVER, f)),
                None => Ok(ExitCode::SUCCESS),
            }
        }
        Command::Sweep { config, out } => {
            let cfg = load(&config)?;
            if cfg.sweep.is_empty() {
                return Err(fail(EXIT_CONFIG, "configuration error at `sweep`: list is empty"));
            }
            let dir = out_dir(out, &cfg)?;
            configure_threads()?;
            let rows = run_sweep(&cfg);
            write_sweep(&rows, &dir).map_err(|e| fail(EXIT_SOLVER, e))?;
            let failed: Vec<String> = rows.iter().filter(|r| r.failed()).map(|r| r.horizon.to_string()).collect();
            if failed.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Err(fail(EXIT_SOLVER, format!("rows failed for T = {}", failed.join(", "))))
            }
        }
        Command::Theory { config } => {
            let cfg = load(&config)?;
            let report = theory_report(&cfg).map_err(|e| fail(EXIT_SOLVER, e))?;
            print!("{}", theory_report_json(&report).map_err(|e| fail(EXIT_SOLVER, e))?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) | Err(code) => code,
    }
}
