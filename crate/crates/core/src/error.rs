use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FitError>;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at row {row}: {message}")]
    Csv { row: u64, message: String },

    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: u64,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column {column}: `{field}` is not a finite number")]
    NonNumeric {
        row: u64,
        column: usize,
        field: String,
    },

    #[error("dataset needs n >= 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("dataset needs at least one coordinate column")]
    NoCoordinates,

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("all sample locations coincide (zero diameter)")]
    ZeroDiameter,

    #[error("fold count {k} out of range for n = {n} (need 2 <= k <= n)")]
    FoldCount { k: usize, n: usize },

    #[error("fold {fold} has only {n_train} training samples")]
    FoldTooSmall { fold: usize, n_train: usize },

    #[error("subset size {subset} exceeds dataset size {n}")]
    SubsetTooLarge { subset: usize, n: usize },

    #[error("every candidate column is excluded")]
    NoCandidates,

    #[error("numerically dependent column (denominator {denominator:e} <= {tolerance:e})")]
    DependentColumn { denominator: f64, tolerance: f64 },

    #[error("basis is rank deficient")]
    RankDeficient,

    #[error("basis is empty")]
    EmptyBasis,

    #[error("scale {requested} outside model range 0..={omega}")]
    ScaleOutOfRange { requested: usize, omega: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("model file: {0}")]
    Schema(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl FitError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FitError::Io {
            path: path.into(),
            source,
        }
    }
}
