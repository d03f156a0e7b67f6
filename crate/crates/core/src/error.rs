//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid input data or configuration (bad schema, missing column,
    /// inconsistent dimensions, out-of-contract arguments).
    #[error("input error: {0}")]
    Input(String),

    /// A value fell outside the mathematical domain of an operation.
    #[error("domain error: {what} = {value} is outside {bounds}")]
    Domain {
        what: String,
        value: f64,
        bounds: String,
    },

    /// The design matrix does not have full column rank.
    #[error("design matrix is rank deficient: offending column(s) {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    /// A numerical routine failed to converge.
    #[error("{routine} did not converge: {detail}")]
    NonConvergence { routine: String, detail: String },

    /// Too many bootstrap replicates failed to refit.
    #[error("bootstrap failure budget exceeded: {failed} of {total} replicates failed")]
    BootstrapBudget { failed: usize, total: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn domain(what: impl Into<String>, value: f64, bounds: impl Into<String>) -> Self {
        Error::Domain {
            what: what.into(),
            value,
            bounds: bounds.into(),
        }
    }
}
