use thiserror::Error;

use crate::optdistill::OptTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error categories, used by the command-line tool to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("empty input in {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("cholesky failed at pivot {pivot}: needs larger jitter")]
    NeedsLargerJitter { pivot: usize },
    #[error("negative eigenvalue {0:e} in a matrix expected to be PSD")]
    NegativeEigenvalue(f64),
    #[error("singular value decomposition did not converge")]
    SvdNoConvergence,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("ridge leverage scores are all zero")]
    LeverageDegenerate,
    #[error("feature matrix of S has rank {rank} < {required}; resample S")]
    ResampleRequired { rank: usize, required: usize },
    #[error("labels have zero RKHS norm")]
    DegenerateLabels,
    #[error("class {class} has {available} examples, {needed} needed")]
    InsufficientExamples { class: u8, needed: usize, available: usize },
    #[error("bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, trace: Box<OptTrace> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) => ErrorClass::Usage,
            Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::CountMismatch { .. }
            | Error::InsufficientExamples { .. }
            | Error::Csv(_)
            | Error::Io(_) => ErrorClass::Data,
            _ => ErrorClass::Numerical,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Csv(format!("{other:?}")),
            }
        } else {
            Error::Csv(e.to_string())
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
