//! Library side of the `neurfs` command-line tool.

pub mod cli;
pub mod commands;
pub mod config;

use std::fmt;
use std::path::Path;

/// A command failure with the process exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Invalid configuration or arguments (exit 2).
    Config(String),
    /// Unreadable, malformed or incompatible input data (exit 3).
    Data(String),
    /// Non-finite losses, divergence or failed numerical checks (exit 4).
    Numeric(String),
    /// Anything else, such as unwritable output paths (exit 1).
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    pub(crate) fn output(path: &Path, e: impl fmt::Display) -> Self {
        Failure::Other(format!("cannot write {}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numeric(m) => write!(f, "numerical failure: {m}"),
            Failure::Other(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl From<neurfs_core::Error> for Failure {
    fn from(e: neurfs_core::Error) -> Self {
        use neurfs_core::Error as E;
        let msg = e.to_string();
        match e {
            E::NonFinite { .. } | E::Diverged { .. } | E::Consistency(_) => Failure::Numeric(msg),
            E::Data(_) | E::Cell { .. } | E::Csv(_) | E::Schema(_) | E::Io { .. } | E::Json(_) | E::Shape(_) => {
                Failure::Data(msg)
            }
            E::Domain(_) => Failure::Other(msg),
        }
    }
}
