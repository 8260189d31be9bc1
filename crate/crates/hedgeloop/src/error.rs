use chrono::NaiveDate;
use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to point at the
/// offending input (line number, date, config key) without needing a backtrace.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("date ordering violation at {date}: {msg}")]
    Ordering { date: NaiveDate, msg: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("insufficient history at index {index}: need {required} prior observations, have {available}")]
    InsufficientHistory {
        index: usize,
        required: usize,
        available: usize,
    },

    #[error("data error on {date}: {msg}")]
    Data { date: NaiveDate, msg: String },

    #[error("llm adapter failure: {0}")]
    Llm(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
