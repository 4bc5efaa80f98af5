use thiserror::Error;

/// Errors raised anywhere in the estimator pipeline.
///
/// Variants split into two families: input/validation problems, and
/// statistical degeneracy (see [`SdeError::is_degenerate`]). Front ends map
/// the two families to different exit codes.
#[derive(Debug, Error)]
pub enum SdeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate sample for median heuristic")]
    DegenerateBandwidth,

    #[error("degenerate U-test: all values identical")]
    DegenerateUTest,

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("bad magic: expected \"SDEA\"")]
    BadMagic,

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SdeError {
    /// True for errors caused by the data being statistically degenerate
    /// rather than malformed.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            SdeError::DegenerateBandwidth | SdeError::DegenerateUTest | SdeError::Degenerate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SdeError>;
