use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operation supports a single bath mode only (state has {0} modes)")]
    MultiMode(usize),

    #[error("cat state normalization {0:e} is below the floor")]
    DegenerateNormalization(f64),

    #[error("non-finite derivative at t = {t}: {detail}")]
    NonFinite { t: f64, detail: String },

    #[error("empty series")]
    EmptySeries,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fit did not converge from any starting point")]
    NotConverged,

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot parse error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
