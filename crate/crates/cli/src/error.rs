use std::fmt;

use dnc::DncError;
use serde::Serialize;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad command line.
    Usage(String),
    /// Config, schema or input-file violation.
    Validation(String),
    /// Failure while the command was running.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Validation(_) => "validation",
            CliError::Runtime(_) => "runtime",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a str,
            message: &'a str,
            exit_code: i32,
        }
        serde_json::to_string(&Record { error: self.kind(), message: self.message(), exit_code: self.exit_code() })
            .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<DncError> for CliError {
    fn from(e: DncError) -> Self {
        let m = e.to_string();
        match e {
            DncError::Io(_)
            | DncError::Diverged(_)
            | DncError::NonFiniteGradient(_)
            | DncError::FullyMaskedRow { .. } => CliError::Runtime(m),
            _ => CliError::Validation(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
