use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Every fallible operation in the library returns
/// one of these; none of them panic on bad numeric input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matmul shape mismatch: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    MatmulShape {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("shape error in {context}: {detail}")]
    Shape {
        context: &'static str,
        detail: String,
    },

    #[error("invalid parameter `{name}`: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    #[error("schedule step {k} out of range (total steps {total})")]
    ScheduleOutOfRange { k: u64, total: u64 },

    #[error("empty batch selection")]
    EmptyBatch,

    #[error("batch index {index} out of range for task with {n} samples")]
    BatchIndex { index: usize, n: usize },

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },

    #[error("weight-decay contraction violated at step {step}: eta*lambda = {eta_lambda}")]
    ContractionViolated { step: u64, eta_lambda: f64 },

    #[error("blow-up at {context}: factor norm {norm:.3e} exceeds {threshold:.1e}")]
    BlowUp {
        context: String,
        norm: f64,
        threshold: f64,
    },

    #[error("degenerate input: {detail}")]
    Degenerate { detail: String },

    #[error("insufficient data: {detail}")]
    InsufficientData { detail: String },

    #[error("config error: {detail}")]
    Config { detail: String },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv parse error at line {line}: {detail}")]
    CsvParse { line: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
