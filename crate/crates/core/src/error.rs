use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: String,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("feedforward edges contain a cycle through {0}")]
    Cycle(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{path}: wrong IDX magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file: needed {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("missing light-field view {0}")]
    MissingView(PathBuf),

    #[error("{path}: view extent {found:?} differs from {expected:?}")]
    InconsistentExtent {
        path: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{path}: malformed PGM: {detail}")]
    Pgm { path: PathBuf, detail: String },

    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("checkpoint: bad magic bytes {0:?}")]
    CheckpointMagic([u8; 4]),

    #[error("checkpoint: unsupported version {0}")]
    CheckpointVersion(u32),

    #[error("checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, dim: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        dim: dim.into(),
        detail: detail.into(),
    }
}
