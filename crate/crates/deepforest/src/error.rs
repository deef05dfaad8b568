//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by data loading, training, attribution and persistence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A cell failed to parse. `row` is the 1-based data row (header excluded),
    /// `column` is the column name.
    #[error("{path}: row {row}, column '{column}': {message}")]
    CsvCell {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: column '{column}' not found in header")]
    MissingColumn { path: String, column: String },

    #[error("{path}: no data rows")]
    EmptyDataset { path: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("out-of-bag importance requires a forest trained with bootstrap=true")]
    NoOobData,

    #[error("cannot normalize: total response variance is zero")]
    ZeroVariance,

    /// Model file could not be parsed. Byte offset is computed from the
    /// parser's line/column position.
    #[error("{path}: parse error at byte {offset} (line {line}, column {column}): {message}")]
    ModelParse {
        path: String,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported model format version {found} (supported: {supported})")]
    ModelVersion { found: u32, supported: u32 },

    /// A structural invariant failed while validating a loaded model.
    #[error("model invariant violated: {0}")]
    ModelInvariant(String),

    /// An internal consistency check failed; indicates a bug, not bad input.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
