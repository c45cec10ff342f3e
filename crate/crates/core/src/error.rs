use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed input file. `row` is 1-based and counts the header as row 1.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("value {value:?} is outside the domain of attribute {attribute:?}")]
    Domain { attribute: String, value: String },

    #[error("attribute {attribute:?}: expected a number, found {value:?}")]
    Type { attribute: String, value: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("reconstruction did not converge after {sweeps} sweeps (residual {residual:e})")]
    Reconstruction { sweeps: usize, residual: f64 },

    #[error("domain too large: {cells} cells exceeds the limit of {limit}")]
    TooLarge { cells: u128, limit: u128 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
