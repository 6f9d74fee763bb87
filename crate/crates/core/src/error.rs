use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("normalizer diverges: nu = 0 requires lambda < 1 (got lambda = {lambda})")]
    Divergent { lambda: f64 },

    #[error("series truncation failed after {terms} terms (lambda = {lambda}, nu = {nu})")]
    Truncation { terms: usize, lambda: f64, nu: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("response at row {row} is not a nonnegative integer: {value}")]
    InvalidResponse { row: usize, value: String },

    #[error("column '{0}' not found")]
    UnknownColumn(String),

    #[error("design matrix is rank deficient (rank {rank} < {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("too few observations: n = {n} but at least {required} are needed")]
    TooFewObservations { n: usize, required: usize },

    #[error("information matrix is singular")]
    SingularInformation,

    #[error("mean approximation invalid at observation {observation} (nu = {nu}, lambda = {lambda}); use median fitted values")]
    ApproximationInvalid {
        observation: usize,
        nu: f64,
        lambda: f64,
    },

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("complete separation detected; logistic MLE does not exist")]
    Separation,

    #[error("response must be binary (0/1); found {value} at row {row}")]
    NonBinaryResponse { row: usize, value: u64 },

    #[error("standard error undefined: {0}")]
    UndefinedStandardError(String),

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Usage, parsing and I/O problems, as opposed to statistical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::MissingValue { .. }
                | Error::InvalidResponse { .. }
                | Error::UnknownColumn(_)
                | Error::Io(_)
                | Error::InvalidParameter(_)
                | Error::RankDeficient { .. }
                | Error::TooFewObservations { .. }
                | Error::NonBinaryResponse { .. }
                | Error::DimensionMismatch { .. }
        )
    }
}
