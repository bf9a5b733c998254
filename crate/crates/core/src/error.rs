use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic, not an IOIMG1 file")]
    BadMagic { path: PathBuf },

    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite pixel value at index {index}")]
    NonFinitePixel { index: usize },

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular covariance in blob measurement")]
    SingularCovariance,

    #[error("chain start state has zero target density")]
    ChainStartOutsideSupport,

    #[error("chain failed at iteration {iteration}: {source}")]
    ChainIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("generator does not provide gradients")]
    GradientUnsupported,

    #[error("network file format version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("network payload size mismatch: header declares {expected} bytes, payload has {found}")]
    PayloadSizeMismatch { expected: usize, found: usize },

    #[error("layer {layer}: unsupported activation {name:?}")]
    UnsupportedActivation { layer: usize, name: String },

    #[error("layer {layer}: unsupported layer type {kind:?}")]
    UnsupportedLayer { layer: usize, kind: String },

    #[error("network header invalid: {0}")]
    NetworkHeader(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error in {path}: {reason}")]
    Csv { path: PathBuf, reason: String },

    #[error("empty score class: {0}")]
    EmptyClass(&'static str),

    #[error("output already exists at {0}; remove it or choose another output directory")]
    OutputExists(PathBuf),

    #[error("chain for image {image_id} failed: {source}")]
    ImageChain {
        image_id: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable small integer per error class, used for process exit codes.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } | Error::OutputExists(_) => 3,
            Error::BadMagic { .. }
            | Error::BadHeader { .. }
            | Error::Truncated { .. }
            | Error::Csv { .. } => 4,
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::VersionMismatch { .. }
            | Error::PayloadSizeMismatch { .. }
            | Error::UnsupportedActivation { .. }
            | Error::UnsupportedLayer { .. }
            | Error::NetworkHeader(_)
            | Error::GradientUnsupported => 5,
            Error::ChainIteration { .. }
            | Error::ChainStartOutsideSupport
            | Error::ImageChain { .. } => 6,
            _ => 1,
        }
    }
}
