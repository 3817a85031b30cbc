//! The `geoflow` command line: dataset generation, geodesic shooting, LDDMM
//! registration, and training, prediction, evaluation and timing of the
//! geodesic network.
//!
//! [`run`] parses arguments, runs one subcommand on a worker pool sized by
//! `--threads` (or `GEOFLOW_THREADS`), and returns the process exit code:
//! 0 on success, 1 for invalid arguments or inputs, 2 when the computation
//! fails.

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

pub mod args;
pub mod data;
pub mod error;
pub mod geodesic;
pub mod network;
pub mod output;

pub use args::{Cli, Command};
pub use error::{CliError, Result};

pub const THREADS_ENV: &str = "GEOFLOW_THREADS";

fn resolve_threads(flag: usize) -> Result<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse()
            .map_err(|_| CliError::Invalid(format!("{THREADS_ENV} must be a positive integer, got `{s}`")))?,
        _ => flag,
    };
    if n == 0 {
        return Err(CliError::Invalid("--threads must be >= 1".into()));
    }
    Ok(n)
}

/// Runs an already parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    let threads = resolve_threads(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::MakeData(a) => data::make_data(a, threads),
        Command::Shoot(a) => geodesic::shoot(a, threads),
        Command::Register(a) => geodesic::register(a, threads),
        Command::Train(a) => network::train(a, threads),
        Command::Predict(a) => network::predict(a, threads),
        Command::Eval(a) => network::eval(a, threads),
        Command::Bench(a) => network::bench(a, threads),
    })
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: geoflow {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
