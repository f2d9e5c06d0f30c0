use std::fmt;
use std::path::Path;

/// Exit-status class of a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, bad config keys or values.
    Usage,
    /// Unreadable, malformed or inconsistent input data.
    Data,
    /// Factorization failures and other numerical breakdowns.
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Data, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Numerical, message: message.into() }
    }

    /// Prefixes the message, keeping the kind.
    pub fn context(self, ctx: impl fmt::Display) -> Self {
        CliError { kind: self.kind, message: format!("{ctx}: {}", self.message) }
    }

    pub fn exit_code(&self) -> u8 {
        self.kind.exit_code()
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<peerbench_core::Error> for CliError {
    fn from(e: peerbench_core::Error) -> Self {
        use peerbench_core::Error as E;
        let kind = match &e {
            E::Numerical(_) => ErrorKind::Numerical,
            E::Config(_) => ErrorKind::Usage,
            E::Domain(_) | E::State(_) | E::Duplicate { .. } => ErrorKind::Data,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
