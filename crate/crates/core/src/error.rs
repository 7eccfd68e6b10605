use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum PrdpError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("record attribute {value} outside [0, {bound}]")]
    AttributeOutOfRange { value: u64, bound: u64 },

    #[error("record has {got} attributes, dataset expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate partition: eps_max {eps_max} must exceed eps_min {eps_min}")]
    DegeneratePartition { eps_min: f64, eps_max: f64 },

    #[error("budget {0} outside the partition range")]
    BudgetOutOfRange(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("custom budget function needs per-domain value bounds for sum scaling")]
    MissingValueBound,

    #[error("mechanism `{mechanism}` requires at least {required} records, got {got}")]
    TooFewRecords {
        mechanism: String,
        required: usize,
        got: usize,
    },

    #[error("method `{method}` does not support query `{query}` (N.A.)")]
    Unsupported { method: String, query: String },

    #[error("unknown mechanism `{0}`")]
    UnknownMechanism(String),

    #[error("malformed wire frame: {0}")]
    Wire(String),

    #[error("missing column `{column}` in {path}")]
    MissingColumn { column: String, path: PathBuf },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = PrdpError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> PrdpError {
    PrdpError::InvalidParameter(msg.into())
}
