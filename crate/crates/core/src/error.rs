use thiserror::Error;

use crate::domain::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument falls outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// NaN or infinite input where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed input file. `line` is 1-based and counts the header.
    #[error("parse error at line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: u64,
        column: Option<usize>,
        message: String,
    },

    /// Well-formed data that breaks a cohort or label invariant.
    #[error("validation failed: {}", join_violations(.0))]
    Validation(Vec<Violation>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
