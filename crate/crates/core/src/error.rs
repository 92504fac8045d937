use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FedError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FedError {
    /// A configuration value is missing, malformed or out of range.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible partition: fragment {fragment} would own no units ({units} units, ratios {ratios:?})")]
    InfeasiblePartition {
        fragment: usize,
        units: usize,
        ratios: Vec<f64>,
    },

    /// No fragment satisfies the delay bound for this client.
    #[error("K too small for client {client}: K = {k}, cheapest fragment costs {min_cost}")]
    Infeasible { client: usize, k: f64, min_cost: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("{path}: parse error at byte offset {offset}: {msg}")]
    Parse {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("task {task} (client {client}, fragment {fragment}): {source}")]
    Task {
        task: u64,
        client: usize,
        fragment: usize,
        #[source]
        source: Box<FedError>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FedError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FedError::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure is a dataset file that could not be opened.
    pub fn is_missing_file(&self) -> bool {
        matches!(self, FedError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}
