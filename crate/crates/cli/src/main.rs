use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod bounds;
mod exit;
mod fit;
mod io;
mod simulate;
mod tails;

use exit::Failure;

const THREADS_VAR: &str = "ROBUST_TRIM_THREADS";

/// Penalized least trimmed squares: fitting, error bounds and Monte Carlo
/// checks.
///
/// Exit codes: 0 ok, 1 verification failure, 2 data error, 3 solver failure,
/// 64 usage error, 65 undefined bound. The ROBUST_TRIM_THREADS environment
/// variable caps the worker threads.
#[derive(Parser, Debug)]
#[command(name = "robust-trim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model to a CSV file.
    Fit(fit::FitArgs),
    /// Fit along a decreasing lambda1 grid with warm starts.
    FitPath(fit::PathArgs),
    /// Compute the finite-sample bound quantities.
    Bounds(bounds::BoundsArgs),
    /// Run a Monte Carlo coverage or robustness experiment.
    Simulate(simulate::SimulateArgs),
    /// Check the chi-square and sub-Gaussian maximum tail bounds by simulation.
    VerifyTails(tails::TailArgs),
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::usage(format!("{THREADS_VAR} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::usage(e.to_string()))
}

fn run(cli: Cli) -> Result<u8, Failure> {
    configure_threads()?;
    match cli.command {
        Command::Fit(a) => fit::run_fit(a),
        Command::FitPath(a) => fit::run_path(a),
        Command::Bounds(a) => bounds::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::VerifyTails(a) => tails::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
