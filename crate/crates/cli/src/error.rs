use std::fmt;
use std::path::Path;

use tlscope_core::Error;

pub const EXIT_BAD_INPUT: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_CALIBRATION: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn bad_input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_BAD_INPUT,
            message: message.into(),
        }
    }

    /// Prefix the message with the file it came from.
    pub fn in_file(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NotConverged(_)
        | Error::EigenNotConverged { .. }
        | Error::EigenResidual { .. }
        | Error::CutoffExceeded { .. }
        | Error::IllConditioned(_)
        | Error::BootstrapFailure { .. } => EXIT_NOT_CONVERGED,
        Error::Calibration(_) => EXIT_CALIBRATION,
        _ => EXIT_BAD_INPUT,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::bad_input(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
