use std::fmt;

use refinery_core::Error;

/// Exit code 2: bad usage or configuration. Exit code 3: numerical or runtime failure.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::DimMismatch { .. }
            | Error::InvalidDomain(_)
            | Error::InvalidParameter { .. }
            | Error::OutOfDomain(_)
            | Error::MissingArtifact { .. }
            | Error::BadSlice(_) => CliError::Config(e.to_string()),
            Error::NoTrials
            | Error::EmptyDataset
            | Error::NonFinite(_)
            | Error::TooManyRecords { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::NotEnoughPoints { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
