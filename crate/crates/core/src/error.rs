use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A malformed annotation row, located by video and 1-based line number.
    #[error("{video_id} line {line}: {message}")]
    Annotation {
        video_id: String,
        line: usize,
        message: String,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("tensor {name}: stored shape {stored:?} does not match config shape {expected:?}")]
    ShapeMismatch {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}
