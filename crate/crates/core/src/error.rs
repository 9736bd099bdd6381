use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("precision must be at least {min} bits, got {bits}")]
    PrecisionTooLow { bits: u32, min: u32 },

    #[error("mixed precision: context carries {expected} bits, scalar carries {found}")]
    MixedPrecision { expected: u32, found: u32 },

    #[error("non-finite scalar")]
    NonFinite,

    #[error("cannot parse scalar `{0}`")]
    ParseScalar(String),

    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    #[error("precision exhausted: {0}")]
    PrecisionExhausted(String),

    #[error("invalid continued fraction: {0}")]
    InvalidContinuedFraction(String),

    #[error("invalid map spec: {0}")]
    InvalidMapSpec(String),

    #[error("singular point: {0}")]
    Singular(String),

    #[error("tuning did not converge after {iterations} iterations: {reason} (bracket [{lo}, {hi}])")]
    TuningFailed {
        iterations: usize,
        reason: String,
        lo: String,
        hi: String,
    },

    #[error("tiling violation at level {level}: {detail}")]
    TilingViolation { level: usize, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("injectivity violation: {0}")]
    InjectivityViolation(String),

    #[error("combinatorics mismatch: {0}")]
    CombinatoricsMismatch(String),

    #[error("ceiling violation: {0}")]
    CeilingViolation(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
