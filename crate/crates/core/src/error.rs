use std::path::PathBuf;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model or training configuration violates one of its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Tensor, image or mask dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Input data is outside its documented domain (non-finite values, non-binary masks, ...).
    #[error("validation failed: {0}")]
    Validation(String),
    /// A metric was requested over a region with no pixels.
    #[error("empty region: {0}")]
    EmptyRegion(String),
    /// Training produced a non-finite loss.
    #[error("non-finite loss for sample {sample} in batch: {detail}")]
    NonFiniteLoss { sample: usize, detail: String },
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("unrecognized layout at {}: {reason}", .root.display())]
    Layout { root: PathBuf, reason: String },
    #[error("{}: {source}", .path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
