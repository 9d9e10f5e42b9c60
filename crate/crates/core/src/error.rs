use std::io;

use thiserror::Error;

/// Errors raised anywhere in the separation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("range gate does not overlap the range axis: {0}")]
    Gate(String),
    #[error("malformed input at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short category name, also used to pick the process exit code.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Configuration(_) => "configuration",
            Error::Numerical(_) => "numerical",
            Error::Gate(_) => "gate",
            Error::Format { .. } => "format",
            Error::Estimation(_) => "estimation",
            Error::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Parameter(_) => 2,
            Error::Configuration(_) => 3,
            Error::Numerical(_) => 4,
            Error::Gate(_) => 5,
            Error::Format { .. } => 6,
            Error::Estimation(_) => 7,
            Error::Io(_) => 8,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
