use std::fmt;
use std::path::Path;

use rappi::protocol::ProtocolError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    Io,
    Parse,
    Config,
    Physics,
}

/// Error reported as JSON on stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    /// Module that raised the error.
    pub module: String,
    pub message: String,
    /// Dotted key path for parse errors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

impl CliError {
    fn new(kind: ErrorKind, module: &str, message: String) -> Self {
        Self {
            kind,
            module: module.to_string(),
            message,
            key: None,
            line: None,
            column: None,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, "cli", format!("{}: {e}", path.display()))
    }

    pub fn config(module: &str, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, module, message.into())
    }

    pub fn physics(module: &str, e: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Physics, module, e.to_string())
    }

    pub fn from_json(e: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let mut err = Self::new(ErrorKind::Parse, "config", inner.to_string());
        err.key = (path != "." && !path.is_empty()).then_some(path);
        if inner.line() > 0 {
            err.line = Some(inner.line());
            err.column = Some(inner.column());
        }
        err
    }

    pub fn protocol(e: ProtocolError) -> Self {
        let module = match &e {
            ProtocolError::Pulse(_) => "pulse",
            ProtocolError::Ensemble(_) => "ensemble",
            ProtocolError::Propagation(_) => "propagation",
            ProtocolError::Analysis(_) => "analysis",
            _ => "protocol",
        };
        Self::physics(module, e)
    }

    /// Exit status: 2 for unusable input, 1 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Parse | ErrorKind::Config => 2,
            ErrorKind::Io | ErrorKind::Physics => 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.module)?;
        if let Some(k) = &self.key {
            write!(f, " at `{k}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for CliError {}
