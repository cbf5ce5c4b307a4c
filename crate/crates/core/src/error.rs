use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("no valid records survived ingestion ({diagnostics} row diagnostics)")]
    EmptyDataset { diagnostics: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown model id {0}")]
    UnknownModel(String),

    #[error("parameter `{param}` missing for model {model}")]
    MissingParameter { model: String, param: String },

    #[error("unexpected parameter `{param}` for model {model}")]
    UnexpectedParameter { model: String, param: String },

    #[error("record `{0}` has nonpositive parameter count or dataset size")]
    NonPositiveInput(String),

    #[error("underdetermined fit: {records} usable records for {params} parameters")]
    Underdetermined { records: usize, params: usize },

    #[error("correlation {rho} outside the positive-definite range ({lower}, 1)")]
    InvalidCorrelation { rho: f64, lower: f64 },

    #[error("residual variance must be positive, got {0}")]
    InvalidVariance(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no converged bootstrap replicates")]
    NoConvergedReplicates,

    #[error("search failed to bracket a root: {0}")]
    NoBracket(String),

    #[error("no improvement to attribute")]
    NoImprovement,

    #[error("analysis not defined: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
