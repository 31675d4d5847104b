use thiserror::Error;

/// Errors raised by the numeric layers (kernel, flow solver, NUM loop, oracles).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: spread vector has {got} weights, deadline is {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("chernoff parameter required but not set")]
    MissingTheta,

    #[error("flow {flow}: no recovery region (rate_min {rate_min} >= 1 - beta = {limit})")]
    NoRecoveryRegion {
        flow: String,
        rate_min: f64,
        limit: f64,
    },

    #[error("root bracketing failed after {expansions} expansions")]
    Bracketing { expansions: usize },

    #[error("no price for cell {0}")]
    MissingPrice(String),

    #[error("unknown cell {0}")]
    UnknownCell(String),

    #[error("unknown flow {0}")]
    UnknownFlow(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
