use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch {
        expected: alloc::string::String,
        got: alloc::string::String,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite loss at epoch {epoch}, step {step} (recon={recon}, aux={aux})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        recon: f64,
        aux: f64,
    },
    #[error("dataset has no {0} labels")]
    MissingLabels(&'static str),
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("unknown class {class} (table has {classes} classes)")]
    UnknownClass { class: i64, classes: usize },
    #[error("CAP of class {0} has zero norm")]
    ZeroNormCap(usize),
    #[error("profile entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty score array")]
    EmptyInput,
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("embedding dimension {0} is too small (need at least 4)")]
    DimTooSmall(usize),
}

impl Error {
    pub(crate) fn shape(expected: impl core::fmt::Display, got: impl core::fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
