use thiserror::Error;

use crate::valuations::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bundle {mask:#b} is out of range for {items} items")]
    InvalidBundle { mask: u32, items: usize },

    #[error("shift must be nonnegative, got {0}")]
    InvalidShift(f64),

    #[error("invalid valuation: {0}")]
    InvalidValuation(String),

    #[error("player {player}: valuation failed class validation: {violation}")]
    ValidationFailed { player: usize, violation: Violation },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid bid: {0}")]
    InvalidBid(String),

    #[error("invalid payment rule: {0}")]
    InvalidRule(String),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("invalid bid grid: {0}")]
    InvalidGrid(String),

    #[error("delta must be strictly positive, got {0}")]
    InvalidDelta(f64),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{what} has size {size}, above the configured cap {cap}{hint}")]
    InstanceTooLarge {
        what: &'static str,
        size: u128,
        cap: u128,
        hint: &'static str,
    },

    #[error("no equilibrium found")]
    NoEquilibriumFound,

    #[error("best-response dynamics did not converge within {rounds} rounds")]
    Timeout { rounds: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn too_large(what: &'static str, size: u128, cap: u128) -> Self {
        Error::InstanceTooLarge {
            what,
            size,
            cap,
            hint: "",
        }
    }
}
