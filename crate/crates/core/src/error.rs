use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },

    #[error("tensor shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: reduction over an empty axis")]
    EmptyAxis { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward already ran on this graph; call zero_grad first")]
    BackwardTwice,

    #[error("{op}: row {row} has zero norm")]
    ZeroNormRow { op: &'static str, row: usize },

    #[error("{op}: index {index} out of range 0..{len}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged: non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("target {target} is not in the candidate subset")]
    TargetNotInSubset { target: usize },

    #[error("report is missing R@{k}")]
    MissingRecall { k: usize },

    #[error("report is missing Rs@{k}")]
    MissingSubsetRecall { k: usize },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("params file: {0}")]
    Params(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Failures while decoding an HFT1 feature file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {0:?}, expected \"HFT1\"")]
    BadMagic([u8; 4]),

    #[error("file truncated: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("dimensions overflow: N={n} Q={q} L={l} D={d}")]
    DimOverflow { n: u32, q: u32, l: u32, d: u32 },

    #[error("zero extent in dimensions: Q={q} L={l} D={d}")]
    ZeroDim { q: u32, l: u32, d: u32 },

    #[error("{extra} trailing bytes after the last item")]
    TrailingBytes { extra: usize },

    #[error("non-finite feature value in item {item}")]
    NonFinite { item: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
