use thiserror::Error;

use crate::backend::BackendError;
use crate::frames::FrameError;
use crate::mask::MaskError;
use crate::model::JobError;
use crate::smooth::SmoothError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Job(#[from] JobError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite parameters for {human_id:?} at frame {frame}")]
    NonFinite { human_id: String, frame: usize },
    #[error("{0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
