use std::fmt;
use std::path::Path;

use salnet_core::pipeline::TrainFailure;
use salnet_core::Error;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// A failed run: the process exit code plus a message for standard error.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::input(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_INPUT
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TrainFailure> for CliError {
    fn from(f: TrainFailure) -> Self {
        f.error.into()
    }
}

pub type CliResult<T> = Result<T, CliError>;
