use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator, planner, oracle and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (mismatched action keys,
    /// unknown vehicle id, world with no CAVs handed to the planner, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config {path}: line {line}: {message}")]
    ConfigSyntax {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config: invalid parameter: {0}")]
    ConfigInvariant(String),

    #[error("tabular MDP: {0}")]
    Mdp(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
