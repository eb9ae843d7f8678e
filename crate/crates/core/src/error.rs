use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Block (q, l) carries less membership weight than the solver can use.
    #[error("degenerate block ({q}, {l}): total weight {weight:e}")]
    DegenerateBlock { q: usize, l: usize, weight: f64 },

    /// Target binary correlation cannot be reached for the given marginals.
    #[error("infeasible correlation {target} for {context}: attainable maximum is {max}")]
    Infeasible {
        context: String,
        target: f64,
        max: f64,
    },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
