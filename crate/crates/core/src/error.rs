use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-positive net gap to leader ({gap:.4} m)")]
    NonPositiveGap { gap: f64 },

    #[error("history does not cover t = {requested:.4} s (earliest sample at {earliest:.4} s); back-fill a warm-up pre-history first")]
    InsufficientHistory { requested: f64, earliest: f64 },

    #[error("history sample at t = {got:.6} s does not follow {last:.6} s by one step of {dt} s")]
    HistoryGap { last: f64, got: f64, dt: f64 },

    #[error("numerical integration failed: {0}")]
    Integration(String),

    #[error("matrix is singular even after regularization")]
    SingularMatrix,

    #[error("covariance is indefinite (smallest eigenvalue {min_eigenvalue:e})")]
    IndefiniteCovariance { min_eigenvalue: f64 },

    #[error("solver did not converge after {iterations} iterations (KKT gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("{0}")]
    Detector(String),

    #[error("labels contain a single class; ROC is undefined")]
    SingleClass,

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch { what: &'static str, left: usize, right: usize },

    #[error("{path}: row {row}: {msg}")]
    Parse { path: PathBuf, row: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
