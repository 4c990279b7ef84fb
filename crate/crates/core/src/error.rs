use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum CaganError {
    /// A caller-supplied value violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A dataset record could not be ingested.
    #[error("ingestion error for pair `{pair_id}`: {reason}")]
    Ingestion { pair_id: String, reason: String },

    /// Triplet sampling needs at least two pairs.
    #[error("dataset too small: {0} pair(s), at least 2 are required")]
    DatasetTooSmall(usize),

    /// A discriminator score or loss input left its admissible range.
    #[error("numerical guard: {0}")]
    NumericalGuard(String),

    /// A loss term became NaN or infinite during training.
    #[error("non-finite loss term `{term}` at step {step}")]
    NonFinite { term: String, step: u64 },

    #[error("unsupported checkpoint format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CaganError {
    /// True for errors caused by bad input rather than by the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            CaganError::Validation(_)
                | CaganError::Ingestion { .. }
                | CaganError::DatasetTooSmall(_)
                | CaganError::UnsupportedVersion { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CaganError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        CaganError::Image {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CaganError> = std::result::Result<T, E>;

macro_rules! ensure_valid {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::CaganError::Validation(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure_valid;
