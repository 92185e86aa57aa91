use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("vector norm is zero")]
    ZeroVector,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need at least {required} Monte Carlo realizations, got {actual}")]
    InsufficientRealizations { required: usize, actual: usize },

    #[error("SINR denominator is degenerate ({0:e})")]
    DegenerateDenominator(f64),

    #[error("pilot fraction tau_p/tau_c must lie in (0, 1), got {tau_p}/{tau_c}")]
    InvalidFraction { tau_p: usize, tau_c: usize },

    #[error("weight vector of UE {ue} is orthogonal to its mean effective channel")]
    ZeroSignalDirection { ue: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("UE {ue}: {source}")]
    AtUe {
        ue: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("drop {drop}: {source}")]
    AtDrop {
        drop: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn at_ue(self, ue: usize) -> Self {
        Error::AtUe {
            ue,
            source: Box::new(self),
        }
    }

    pub fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    pub fn at_drop(self, drop: usize) -> Self {
        Error::AtDrop {
            drop,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical pipeline, as opposed to bad input
    /// or I/O. The CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::AtUe { source, .. } | Error::AtIteration { source, .. } | Error::AtDrop { source, .. } => {
                source.is_numerical()
            }
            Error::InvalidConfig(_) | Error::InvalidParameter(_) | Error::Io { .. } => false,
            _ => true,
        }
    }
}
