use std::fmt;

use crate::archive::ArchiveError;

/// Maps onto the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Internal => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Data => "data",
            Kind::Internal => "internal",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError { kind: Kind::Usage, message: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError { kind: Kind::Data, message: msg.into() }
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError { kind: Kind::Internal, message: msg.into() }
    }

    /// `error[<kind>]: <message>` on one line, newlines folded.
    pub fn line(&self) -> String {
        let msg: Vec<&str> = self.message.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        format!("error[{}]: {}", self.kind.name(), msg.join(" | "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<phq_ensemble::Error> for CliError {
    fn from(e: phq_ensemble::Error) -> Self {
        use phq_ensemble::Error as E;
        match e {
            E::Numeric(_) => CliError::internal(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        match e {
            ArchiveError::Io(_) => CliError::internal(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::internal(format!("writing report: {e}"))
    }
}
