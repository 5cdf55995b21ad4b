//! Command-line pipeline: bundles to metrics, metrics to a fitted HMM, and the
//! fitted HMM to training maps and convergence regressions.

pub mod args;
pub mod commands;
mod error;

use clap::Parser;

pub use args::Cli;
pub use commands::run;
pub use error::CliError;

/// Parses `argv` (program name first) and runs the command.
pub fn run_from<I, T>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    run(&cli)
}
