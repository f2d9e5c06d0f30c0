use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A configuration value violates its documented invariant.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A covariance factorization failed even after jitter was added.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// The operation needs sampler output that does not exist yet.
    #[error("sampler state: {0}")]
    State(String),
    /// Two observations share the same (subject, time) key.
    #[error("duplicate observation for subject `{subject}` at time {time}")]
    Duplicate { subject: String, time: i64 },
}

pub type Result<T> = core::result::Result<T, Error>;
