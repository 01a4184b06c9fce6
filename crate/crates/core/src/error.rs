use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by model construction, simulation and estimation.
#[derive(Debug, Error)]
pub enum FnarError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ill-conditioned basis: {0}")]
    IllConditionedBasis(String),

    #[error("non-stationary DGP: {0}")]
    NonStationaryDgp(String),

    #[error("cannot difference a panel with T = {0} (need at least two periods)")]
    CannotDifference(usize),

    #[error("underidentified: {detail} (smallest singular value {min_singular:.3e})")]
    Underidentified { detail: String, min_singular: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("variance unavailable: {0}")]
    VarianceUnavailable(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("{failures} of {total} replications failed")]
    Harness { failures: usize, total: usize },

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = FnarError> = std::result::Result<T, E>;

impl FnarError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FnarError::InvalidArgument(msg.into())
    }

    /// Process exit code used by the command-line tool.
    ///
    /// 2 = I/O, 3 = model or stationarity, 4 = data shape, 5 = numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            FnarError::Io { .. } => 2,
            FnarError::NonStationaryDgp(_) | FnarError::Underidentified { .. } => 3,
            FnarError::InvalidArgument(_)
            | FnarError::Domain(_)
            | FnarError::CannotDifference(_)
            | FnarError::MissingData(_)
            | FnarError::Schema { .. } => 4,
            FnarError::IllConditionedBasis(_)
            | FnarError::NumericalFailure(_)
            | FnarError::VarianceUnavailable(_)
            | FnarError::Harness { .. } => 5,
        }
    }
}
