use thiserror::Error;

/// Errors surfaced by the platoon laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("stale forward cache: cache version {cache}, parameters at version {params}")]
    StaleCache { cache: u64, params: u64 },

    #[error("training diverged at stage {stage}: {detail}")]
    Divergence { stage: usize, detail: String },

    #[error("kernel row for state {state}, action {action} sums to {sum}")]
    KernelNotNormalized {
        state: usize,
        action: usize,
        sum: f64,
    },

    #[error("instance too large for exact search: {0}")]
    TooLarge(String),

    #[error("conditioning set B is not a subset of A: {0}")]
    NotSubset(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} contains non-finite value {v}")));
    }
    Ok(())
}
