use std::path::PathBuf;

use thiserror::Error;

use crate::train::EpochRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A loss or gradient evaluated to NaN/inf.
    #[error("non-finite value in {what}{}", record.map(|r| format!(" at record {r}")).unwrap_or_default())]
    NonFinite { what: String, record: Option<usize> },

    /// Training produced a non-finite loss; the history up to the failure is attached.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        history: Vec<EpochRecord>,
    },

    /// A closed-form result violated an internal consistency check.
    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error at row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
