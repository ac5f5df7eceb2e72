use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by tensor primitives and model construction.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// An operation received operands whose shapes cannot be combined.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A tensor failed validation (bad axis, empty dimension, bad value range).
    InvalidArgument { op: &'static str, detail: String },
    /// A NaN or infinity was produced where a finite value is required.
    NonFinite { op: &'static str, detail: String },
    /// Cosine similarity against a zero-norm row.
    ZeroNorm { op: &'static str, row: usize },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            CoreError::InvalidArgument { op, detail } => write!(f, "{op}: {detail}"),
            CoreError::NonFinite { op, detail } => {
                write!(f, "{op}: non-finite value encountered ({detail})")
            }
            CoreError::ZeroNorm { op, row } => {
                write!(f, "{op}: row {row} has zero norm, cosine similarity undefined")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;
