use std::fmt;
use std::path::Path;

use cirt::ErrorKind;

/// Failure of a subcommand, reduced to an exit-code class and one line of
/// text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    pub fn missing_input(flag: &str, path: &Path) -> Self {
        CliError::data(format!("file not found for {flag}: {}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }

    /// `error kind=<kind> code=<n> message="<text>"` on a single line.
    pub fn to_line(&self) -> String {
        let text: String = self
            .message
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        format!(
            "error kind={} code={} message={:?}",
            self.kind.as_str(),
            self.exit_code(),
            text
        )
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<cirt::Error> for CliError {
    fn from(e: cirt::Error) -> Self {
        CliError {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
