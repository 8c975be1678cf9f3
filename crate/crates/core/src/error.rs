use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: file not found", path.display())]
    NotFound { path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: unsupported image format: {detail}", path.display())]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("{}: corrupt header: {detail}", path.display())]
    CorruptHeader { path: PathBuf, detail: String },

    #[error("{}: png encode failed: {detail}", path.display())]
    Encode { path: PathBuf, detail: String },

    #[error("shape mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    ShapeMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("patch {patch} does not fit in {width}x{height} image")]
    PatchTooLarge {
        patch: usize,
        width: usize,
        height: usize,
    },

    #[error("image {width}x{height} is smaller than the required {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("{}: no images found", path.display())]
    EmptySource { path: PathBuf },

    #[error("{}: {detail}", path.display())]
    Manifest { path: PathBuf, detail: String },

    #[error("{}: {detail}", path.display())]
    Checkpoint { path: PathBuf, detail: String },

    #[error("unknown algorithm '{0}'")]
    UnknownAlgorithm(String),

    #[error("network: {0}")]
    Network(String),

    #[error("forward cache does not match the network (stale cache)")]
    StaleCache,

    #[error("training: {0}")]
    Training(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
}

impl Error {
    /// Stable short identifier used by the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotFound { .. } => "not-found",
            Error::Io { .. } => "io",
            Error::UnsupportedFormat { .. } => "unsupported-format",
            Error::CorruptHeader { .. } => "corrupt-header",
            Error::Encode { .. } => "encode",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::InvalidImage(_) => "invalid-image",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::PatchTooLarge { .. } => "patch-too-large",
            Error::ImageTooSmall { .. } => "image-too-small",
            Error::EmptySource { .. } => "empty-source",
            Error::Manifest { .. } => "manifest",
            Error::Checkpoint { .. } => "checkpoint",
            Error::UnknownAlgorithm(_) => "unknown-algorithm",
            Error::Network(_) => "network",
            Error::StaleCache => "stale-cache",
            Error::Training(_) => "training",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn shape(a: (usize, usize), b: (usize, usize)) -> Self {
        Error::ShapeMismatch {
            left_w: a.0,
            left_h: a.1,
            right_w: b.0,
            right_h: b.1,
        }
    }
}
