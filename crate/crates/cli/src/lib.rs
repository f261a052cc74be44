//! Command-line front end for `selate`.

pub mod args;
pub mod error;
pub mod estimate;
pub mod study;

use std::ffi::OsString;
use std::path::Path;

use clap::Parser;

use crate::args::{Cli, Command, FileConfig};
use crate::error::{CliError, CliResult};

pub(crate) fn validate_alpha(alpha: f64) -> CliResult<f64> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(alpha)
    } else {
        Err(CliError::Usage(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

pub fn read_config(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let file = cli
        .config
        .as_deref()
        .map(read_config)
        .transpose()?
        .unwrap_or_default();
    let jobs = match cli.jobs.or(file.jobs) {
        Some(0) => return Err(CliError::Usage("--jobs must be positive".into())),
        jobs => jobs,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs:?} workers: {e}")))?;
    pool.install(|| match cli.command {
        Command::Estimate(a) => estimate::run(a.merge(file.estimate)),
        Command::Simulate(a) => study::run_simulate(a.merge(file.simulate)),
        Command::Power(a) => study::run_power(a.merge(file.power)),
    })
}

/// Parse `args`, run the command and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("selate: {e}");
            e.exit_code()
        }
    }
}
