use std::path::PathBuf;

use rrpsr_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene has no targets")]
    EmptyScene,
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("echo already carries noise at {0} dB; noise must be applied to a noise-free echo")]
    DoubleNoise(f64),
    #[error("MUSIC needs n_targets < subarray_len (got {n_targets} >= {subarray_len})")]
    RankDeficient { n_targets: usize, subarray_len: usize },
    #[error("least-squares refit over the selected support is singular")]
    DegenerateSupport,
    #[error("unknown estimator {0:?} (expected fft, music, omp, hqs or dssr)")]
    UnknownEstimator(String),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("corrupt dataset at item {index}: {reason}")]
    CorruptDataset { index: u64, reason: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
