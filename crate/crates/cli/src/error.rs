use std::fmt;

use drkm::DrkmError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// A failure together with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DrkmError> for CliError {
    fn from(e: DrkmError) -> Self {
        let code = match &e {
            DrkmError::Config(_) | DrkmError::UnsupportedGradient(_) => EXIT_CONFIG,
            DrkmError::Numerical { .. } | DrkmError::SmootherUnderflow { .. } => EXIT_NUMERICAL,
            DrkmError::InvalidInput(_)
            | DrkmError::DimensionMismatch { .. }
            | DrkmError::Data(_)
            | DrkmError::Format(_)
            | DrkmError::Io(_) => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}
