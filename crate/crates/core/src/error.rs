use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("parameter `{0}` is not on the tape")]
    UnknownParam(String),

    #[error("parameter `{0}` registered twice on the same tape")]
    DuplicateParam(String),

    #[error("second-order nesting limit is one")]
    NestingLimit,

    #[error("node {0} is not a leaf")]
    NotLeaf(usize),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("unequal point-set sizes {0} and {1}; resample_to_equal first")]
    UnequalSizes(usize, usize),

    #[error("assignment size {0} exceeds the exact-solver guard {1}; use sinkhorn")]
    TooLarge(usize, usize),

    #[error("class {y} missing from domain {t}")]
    MissingClass { t: usize, y: usize },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("enumeration guard exceeded: {0} trees")]
    GuardExceeded(u128),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
