use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty sample: at least one uncensored value is required")]
    EmptySample,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("parity violation: position {pos} at time {time} is not on the even sublattice")]
    Parity { pos: i64, time: i64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("state already absorbed in the coalesced set")]
    Absorbed,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("operation not supported for model {model}: {reason}")]
    Unsupported { model: String, reason: String },

    #[error("all {0} replicates were censored")]
    AllCensored(u64),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
