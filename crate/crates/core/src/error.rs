use std::io;

use thiserror::Error;

pub type Result<T, E = GirError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GirError {
    #[error("zero quaternion")]
    ZeroQuaternion,
    #[error("unsupported SH degree {0} (max 3)")]
    UnsupportedShDegree(usize),
    #[error("reflect on back face")]
    BackFace,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("scene is empty")]
    EmptyScene,
    #[error("no occupiers: every Gaussian was filtered out before voxelization")]
    NoOccupiers,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("NaN gradient in parameter group `{group}`")]
    NanGradient { group: &'static str },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("missing file {0}")]
    MissingFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl GirError {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        GirError::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        GirError::InvalidArgument(detail.into())
    }
}
