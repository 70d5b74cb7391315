use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An operand does not have the shape its partners require.
    #[error("dimension mismatch for {operand}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        operand: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// A scalar or structural parameter is outside its valid range.
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    /// A NaN or infinity appeared where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    /// The problem is degenerate (zero norm, empty residual, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(
        operand: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    ) -> Self {
        Error::DimensionMismatch {
            operand,
            expected,
            found,
        }
    }
}
