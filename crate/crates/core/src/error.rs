use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by data loading, model fitting and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "non-finite value while evaluating the log likelihood ({context}); \
         consider standardizing the data before fitting"
    )]
    NonFinite { context: String },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NotConverged { iterations: usize, gradient_norm: f64, last_theta: Vec<f64> },

    #[error("likelihood is unbounded: population {population} is (quasi-)separated from the others")]
    Separated { population: usize, label: String },

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("bootstrap unreliable: {failed} of {total} replicates failed to refit")]
    BootstrapUnreliable { failed: usize, total: usize },

    #[error("density estimate at {at} is {value:.3e}, too small for a stable variance")]
    DensityTooSmall { at: f64, value: f64 },

    #[error("{0}")]
    Numerical(String),

    #[error("study aborted: {failed} of {total} replicates failed")]
    StudyUnreliable { failed: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
