use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix has no rows or no columns")]
    EmptyMatrix,
    #[error("non-finite entry at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("column {column} has zero norm, cannot normalize")]
    ZeroColumn { column: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular value decomposition did not converge")]
    NumericalFailure,

    #[error("tuning grid is empty")]
    EmptyGrid,
    #[error("tuning parameter {0} is not strictly positive")]
    NonpositiveTuning(f64),
    #[error("invalid grid specification: {0}")]
    InvalidGrid(String),

    #[error("estimate is numerically zero")]
    ZeroEstimate,
    #[error("every grid point produced a zero estimate")]
    EmptyPath,
    #[error("subject covariate vector must be finite with nonzero norm")]
    InvalidSubject,
    #[error("problem carries no ground truth (beta*, u)")]
    MissingTruth,
    #[error("no grid point satisfies the oracle lower bound")]
    NoAdmissiblePoint,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fold count {folds} is invalid for {samples} samples")]
    InvalidFolds { folds: usize, samples: usize },
    #[error("fold {fold} has no samples")]
    EmptyFold { fold: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: parse error at row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    RaggedRows {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-numeric cell {value:?} at row {row}, column {column}")]
    NonNumericCell {
        path: PathBuf,
        row: usize,
        column: usize,
        value: String,
    },
    #[error("{path}: response column {name:?} not found")]
    MissingResponse { path: PathBuf, name: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
