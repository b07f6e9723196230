//! Experiment runner for the `bsmp-core` solvers.
//!
//! `bsmp <solve|cost|optimize|verify|benchmark> --config FILE [--seed K]
//! [--threads W] [--out DIR]` reads a JSON run configuration, writes CSV and
//! JSON outputs into the output directory and exits with 0 when every verdict
//! passes, 2 when some verdict fails and 1 on configuration or runtime errors.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;

pub use commands::{execute, Command};
pub use config::{ControlSpec, Overrides, RunConfig};
pub use error::CliError;
pub use output::{Summary, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VERDICT_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "bsmp",
    version,
    about = "Controlled BSDE solver and stochastic maximum principle diagnostics"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Replaces the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors are reported on stderr as one `bsmp-error: <kind>: <message>` line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return EXIT_OK;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).line());
            return EXIT_ERROR;
        }
    };
    match run(&cli) {
        Ok(summary) if summary.pass() => EXIT_OK,
        Ok(summary) => {
            for v in summary.verdicts.iter().filter(|v| !v.pass) {
                eprintln!(
                    "bsmp-verdict-failed: {} value={} threshold={}",
                    v.name, v.value, v.threshold
                );
            }
            EXIT_VERDICT_FAILED
        }
        Err(e) => {
            eprintln!("{}", e.line());
            EXIT_ERROR
        }
    }
}

pub fn run(cli: &Cli) -> Result<Summary, CliError> {
    if cli.threads == Some(0) {
        return Err(CliError::Usage("--threads must be >= 1".into()));
    }
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
    };
    let cfg = RunConfig::load(&cli.config, &overrides)?;
    execute(
        cli.command,
        &cfg,
        cli.threads.unwrap_or_else(default_threads),
    )
}
