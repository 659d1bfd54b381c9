use thiserror::Error;

pub type Result<T> = std::result::Result<T, FflqrError>;

#[derive(Debug, Error)]
pub enum FflqrError {
    #[error("invalid argument `{field}`: {message}")]
    InvalidArgument { field: &'static str, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("truncation K = {requested} exceeds the admissible maximum {max} for {context}")]
    TruncationTooLarge {
        context: &'static str,
        requested: usize,
        max: usize,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("quantile solver did not converge after {iterations} iterations (duality gap {gap:.3e}, objective {objective:.6e})")]
    NoConvergence {
        iterations: usize,
        gap: f64,
        objective: f64,
    },

    #[error("solver failed on response column {column}: {source}")]
    ColumnFailure {
        column: usize,
        #[source]
        source: Box<FflqrError>,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("{failed} of {total} replicates failed: {message}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        message: String,
    },

    #[error("malformed data in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse failure class, used for process exit codes and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl FflqrError {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        FflqrError::InvalidArgument {
            field,
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            FflqrError::InvalidArgument { .. } | FflqrError::Config(_) | FflqrError::Json(_) => {
                ErrorKind::Config
            }
            FflqrError::DimensionMismatch { .. }
            | FflqrError::NonFinite { .. }
            | FflqrError::GridMismatch(_)
            | FflqrError::TruncationTooLarge { .. }
            | FflqrError::Parse { .. }
            | FflqrError::Io(_)
            | FflqrError::Csv(_) => ErrorKind::Data,
            FflqrError::NoConvergence { .. }
            | FflqrError::Singular(_)
            | FflqrError::TooManyFailures { .. } => ErrorKind::Numerical,
            FflqrError::ColumnFailure { source, .. } => source.kind(),
        }
    }
}
