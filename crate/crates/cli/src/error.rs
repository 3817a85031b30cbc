use std::fmt::Display;
use std::path::Path;

use geoflow_core::Error as CoreError;
use geoflow_gdn::GdnError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Failures of a command, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, values or input files. Exit code 1.
    #[error("{0}")]
    Invalid(String),
    /// The computation itself failed. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    /// Prefixes the message with the flag whose input caused it.
    pub fn for_flag(self, flag: &str) -> Self {
        match self {
            CliError::Invalid(m) => CliError::Invalid(format!("{flag}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{flag}: {m}")),
        }
    }
}

pub fn invalid(msg: impl Display) -> CliError {
    CliError::Invalid(msg.to_string())
}

fn core_is_input_error(e: &CoreError) -> bool {
    match e {
        CoreError::Io(io) => io.kind() == std::io::ErrorKind::NotFound,
        CoreError::BlowUp { .. } | CoreError::NonFinite(_) | CoreError::EmptyBoundary { .. } => false,
        _ => true,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if core_is_input_error(&e) {
            CliError::Invalid(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<GdnError> for CliError {
    fn from(e: GdnError) -> Self {
        let input = match &e {
            GdnError::Config(_) | GdnError::EmptyDataset(_) | GdnError::Checkpoint(_) | GdnError::Json(_) => true,
            GdnError::Core(c) => core_is_input_error(c),
            GdnError::Io(io) => io.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        };
        if input {
            CliError::Invalid(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Checks that an input file given by `flag` exists.
pub fn require_file(flag: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{flag}: no such file {}", path.display())))
    }
}
