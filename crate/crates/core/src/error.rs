use thiserror::Error;

use crate::vector::WorkerVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("trimming 2*{trimmed} of {count} inputs leaves nothing to average")]
    TooMuchTrimming { trimmed: usize, count: usize },

    #[error("krum needs m >= f + 3, got m = {m}, f = {f}")]
    KrumTooFewInputs { m: usize, f: usize },

    #[error("geometric median did not converge in {iterations} iterations")]
    NotConverged {
        iterations: usize,
        last_iterate: WorkerVector,
    },

    #[error("{0} is not a robust aggregator and has no c_delta bound")]
    NotRobust(&'static str),

    #[error("point lies outside the feasible set (distance {distance} > radius {radius})")]
    Infeasible { distance: f64, radius: f64 },

    #[error("label {0} is outside 0..=9")]
    LabelOutOfRange(u32),

    #[error("attack `{attack}` unsupported: {reason}")]
    UnsupportedAttack { attack: &'static str, reason: String },

    #[error("declared constants violated: {0}")]
    ConstantsViolated(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
