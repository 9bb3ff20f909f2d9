use thiserror::Error;

/// Errors produced by kernel constructors and operations.
///
/// Shape and domain violations are reported eagerly at the call site; no
/// kernel op silently broadcasts or truncates.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("empty dimension for {what}: rows and cols must be positive")]
    EmptyDim { what: &'static str },

    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },

    #[error("non-finite value at ({row}, {col}) in {what}")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("attention query row {row} has every key masked")]
    AllKeysMasked { row: usize },

    #[error("interpolation time {t} is outside [0, 1]")]
    TimeOutOfRange { t: f64 },

    #[error("token index {index} is out of vocabulary (size {vocab})")]
    TokenOutOfVocab { index: usize, vocab: usize },

    #[error("token count {tokens} does not match hidden rows {rows}")]
    TokenCountMismatch { tokens: usize, rows: usize },
}
