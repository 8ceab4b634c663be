use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("register `{0}` appears more than once")]
    LayoutConflict(String),
    #[error("layouts differ")]
    LayoutMismatch,
    #[error("register `{0}` is not part of the layout")]
    UnknownRegister(String),
    #[error("register dimension must be at least 1, got {0}")]
    BadDimension(usize),
    #[error("index {index} out of range for register `{register}` of dimension {dim}")]
    IndexOutOfRange {
        register: String,
        index: usize,
        dim: usize,
    },
    #[error("expected {expected} indices, got {found}")]
    IndexArity { expected: usize, found: usize },
    #[error("register `{register}` has dimension {expected}, matrix has {found}")]
    DimensionMismatch {
        register: String,
        expected: usize,
        found: usize,
    },
    #[error("matrix is not unitary (deviation {0:e})")]
    NotUnitary(f64),
    #[error("joint dimension of the layout overflows 64 bits")]
    DimensionOverflow,
    #[error("patterns of a projector overlap")]
    OverlappingPatterns,
    #[error("non-finite amplitude")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
