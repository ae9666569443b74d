use thiserror::Error;

/// Errors raised by the library. Verification-style operations report
/// violations in their return values instead of failing.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("element set is not a group: {0}")]
    NotAGroup(String),

    #[error("group order {order} exceeds the configured cap {cap}")]
    SizeLimit { order: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stabilizer decision is ambiguous: gap {gap:e} is within a factor 10 of threshold {threshold:e}")]
    AmbiguousStabilizer { gap: f64, threshold: f64 },

    #[error("thresholded stabilizer set is not a subgroup (tolerance inconsistent)")]
    NotASubgroup,

    #[error("direction must be nonzero")]
    ZeroDirection,

    #[error("direction is not in the null space of the stabilizer projector (residual {residual:e})")]
    NotANullDirection { residual: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("eigensolver did not converge after {sweeps} sweeps")]
    DegenerateEigensolve { sweeps: usize },

    #[error("Fisher information is singular at this parameter")]
    SingularFisher,

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("malformed data: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
