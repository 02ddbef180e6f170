use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {axis} expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid tensor shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing cached forward state for layer {layer} ({kind})")]
    MissingCache { layer: usize, kind: &'static str },

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("column {column} has no present values")]
    EmptyColumn { column: String },

    #[error("column {column}: need {k} donor rows, only {available} available")]
    InsufficientDonors { column: String, k: usize, available: usize },

    #[error("row {row} shares no present coordinates with any donor for column {column}")]
    NoSharedCoordinates { row: usize, column: String },

    #[error("sample {index} has missing keypoints; augmentation requires complete cases")]
    IncompleteSample { index: usize },

    #[error("bad magic in weight file: expected \"KPBW\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported weight format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("weight tensor {name}: expected shape {expected:?}, found {found:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weight file truncated or malformed: {0}")]
    Truncated(String),

    #[error("no supervised coordinates in batch (mask sums to zero)")]
    EmptyMask,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
