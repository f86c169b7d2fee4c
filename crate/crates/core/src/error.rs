//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance not positive definite")]
    CovarianceNotPd,

    #[error("A not PD; reduce shrink")]
    KnockoffANotPd,

    #[error("A not PD")]
    ANotPd,

    #[error("matrix not symmetric (relative tolerance {tol})")]
    NotSymmetric { tol: f64 },

    #[error("precision matrix not positive definite")]
    PrecisionNotPd,

    #[error("internal error: {0}")]
    Internal(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("no posterior draws")]
    NoPosteriorDraws,

    #[error("non-finite likelihood at iteration {iter}")]
    NonFiniteLikelihood { iter: usize },

    #[error("empty draw sequence")]
    EmptyDraws,

    #[error("chain too short: need at least {min} samples, got {got}")]
    ChainTooShort { min: usize, got: usize },

    #[error("zero variance")]
    ZeroVariance,

    #[error("degenerate column {name:?}")]
    DegenerateColumn { name: String },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("augmented design singular; use ridge mode")]
    SingularDesign,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
