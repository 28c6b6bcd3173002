use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Evaluation requested outside the span covered by sampled data.
    #[error("range error: t = {t} s outside [{start}, {end}] s")]
    Range { t: f64, start: f64, end: f64 },

    /// A configuration violates a model invariant.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("no peak found in band [{lo}, {hi}] Hz")]
    NoPeak { lo: f64, hi: f64 },

    #[error("capacity exceeded: {requested} spins requested, budget is {budget}; shrink the box or lower the density")]
    Capacity { requested: usize, budget: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("corrupt trace at record {record}: {reason}")]
    CorruptTrace { record: u64, reason: String },

    #[error("parse error in {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
