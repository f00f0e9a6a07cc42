use std::fmt;
use std::path::Path;

use nrc_lab::Error;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A failure carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Degenerate(_) | Error::Divergence { .. } | Error::Numerical(_) => EXIT_RUNTIME,
            _ => EXIT_USAGE,
        };
        let message = match e {
            Error::UseNoRegularizationSolver => format!("{e}; rerun `solve` with --no-reg"),
            _ => e.to_string(),
        };
        Self { code, message }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(format!("io error: {e}"))
    }
}

pub fn require_file(path: &Path) -> CliResult<()> {
    if !path.is_file() {
        return Err(CliError::usage(format!("input file not found: {}", path.display())));
    }
    Ok(())
}
