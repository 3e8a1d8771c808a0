use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema: {0}")]
    Schema(String),

    #[error("no sensitive features declared in schema")]
    NoSensitiveFeatures,

    #[error("feature `{feature}`: {reason}")]
    Domain { feature: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("assignment space too large ({0})")]
    SpaceOverflow(String),

    #[error("numerical stall after {iterations} simplex iterations")]
    NumericalStall { iterations: usize },

    #[error("lp: {0}")]
    Lp(String),

    #[error("milp: {0}")]
    Milp(String),

    #[error("undecided: solver limit reached before the fair label was resolved")]
    Undecided,

    #[error("enumeration cap exceeded: |A(x)| = {size} > {cap}")]
    CapExceeded { size: u64, cap: u64 },

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Divergence { epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(feature: &str, reason: impl Into<String>) -> Self {
        Error::Domain {
            feature: feature.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
