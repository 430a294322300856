use thiserror::Error;

use crate::models::StateCode;

/// Errors raised by the sampler, its resamplers and the reference oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum QsdError {
    /// Every particle has been absorbed; the sampler cannot continue.
    #[error("all particles absorbed")]
    AllAbsorbed,

    /// A region with a positive target count holds no particles at a resampling time.
    #[error("region {region} has no particles to resample from")]
    RegionExtinct { region: usize },

    /// A surviving particle sits in a state that no region of the partition covers.
    #[error("state {0} is not covered by any region")]
    Unpartitioned(StateCode),

    /// An operation was called outside of its documented precondition.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A state counter exceeded the range its packed encoding can represent.
    #[error("state counter overflow: {0}")]
    StateOverflow(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid resampler: {0}")]
    InvalidResampler(String),

    /// No samples were collected (burn-in covers the whole horizon).
    #[error("run log holds no samples")]
    EmptyLog,

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("transient state enumeration exceeded {limit} states")]
    EnumerationOverflow { limit: usize },

    /// Parameters lie outside the regime in which a result is defined.
    #[error("parameter regime violated: {0}")]
    Regime(String),

    #[error("no oracle available: {0}")]
    UnsupportedOracle(String),
}

pub type Result<T, E = QsdError> = std::result::Result<T, E>;
