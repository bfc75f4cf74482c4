use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{channels} channels cannot be split into {scale} equal groups")]
    Divisibility { channels: usize, scale: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range for {what} of size {len}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("truncated file: needed {needed} more bytes while reading {what}")]
    Truncated { what: &'static str, needed: usize },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("duplicate path in dataset: {0}")]
    DuplicatePath(String),

    #[error("cannot parse identity/camera from file name {0:?}")]
    UnparseableName(String),

    #[error("{path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("impossible pair composition: {0}")]
    PairComposition(String),

    #[error("pair {index}: pair label {label:?} inconsistent with identities {a} and {b}")]
    PairLabel {
        index: usize,
        label: String,
        a: usize,
        b: usize,
    },

    #[error("zero-norm descriptor for {0}")]
    ZeroNorm(String),

    #[error("empty candidate set: every gallery row was excluded")]
    EmptyCandidates,

    #[error("no ground truth for query")]
    NoGroundTruth,

    #[error("gradient bundle: {0}")]
    Gradient(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
