use std::path::PathBuf;

use thiserror::Error;

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

    #[error("schema references column `{0}` which is not in the header")]
    MissingColumn(String),

    #[error("no rows left after cleaning ({dropped} dropped)")]
    EmptyTable { dropped: usize },

    #[error("categorical column `{column}` has {count} distinct training values (limit {limit})")]
    TooManyCategories {
        column: String,
        count: usize,
        limit: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss while training client {client}")]
    Divergence { client: usize },

    #[error("invalid hypergraph: {0}")]
    InvalidHypergraph(String),

    #[error("vertex {0} has zero degree")]
    ZeroDegree(usize),

    #[error(
        "eigensolver did not converge after {iterations} iterations (max residual {max_residual:.3e})"
    )]
    NoConvergence {
        iterations: usize,
        max_residual: f64,
        residuals: Vec<f64>,
    },

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("missing artifact `{artifact}`; run stage `{stage}` first")]
    MissingArtifact { artifact: String, stage: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("output directory is locked by another run ({0})")]
    Locked(PathBuf),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
