//! Exit-code contract: 0 success, 1 usage or state error, 2 data or backend
//! error.

use srlf_core::Error;

pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(error: anyhow::Error) -> CliError {
    CliError { code: USAGE, error }
}

pub fn data(error: anyhow::Error) -> CliError {
    CliError { code: DATA, error }
}

/// State and configuration problems are the caller's to fix; everything
/// about the inputs or the backend is a data error.
impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        let code = match &error {
            Error::Invalid { .. } | Error::Checkpoint(_) | Error::Template(_) => USAGE,
            _ => DATA,
        };
        CliError { code, error: error.into() }
    }
}
