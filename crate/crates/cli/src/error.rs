// SPDX-License-Identifier: Apache-2.0

use meshtrace_core::Error;
use serde::Serialize;

/// Exit status for bad invocations, missing inputs and schema violations.
pub const EXIT_USAGE: u8 = 2;
/// Exit status for failures while doing the work.
pub const EXIT_RUNTIME: u8 = 1;

/// An error rendered as one JSON line on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    #[serde(rename = "error")]
    pub kind: &'static str,
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, code: u8, message: impl Into<String>) -> Self {
        Self {
            kind,
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", EXIT_USAGE, message)
    }

    pub fn missing(path: &std::path::Path) -> Self {
        Self::new("missing_file", EXIT_USAGE, format!("{}: no such file or directory", path.display()))
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new("runtime", EXIT_RUNTIME, message)
    }

    pub fn to_json_line(&self) -> String {
        let one_line = Self {
            kind: self.kind,
            code: self.code,
            message: self.message.split_whitespace().collect::<Vec<_>>().join(" "),
        };
        serde_json::to_string(&one_line).expect("error serializes")
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                Self::new("missing_file", EXIT_USAGE, message)
            }
            Error::Io { .. } => Self::new("io", EXIT_RUNTIME, message),
            Error::Schema { .. } | Error::Parse { .. } | Error::Json(_) => Self::new("schema", EXIT_USAGE, message),
            Error::Argument(_) | Error::Config(_) => Self::new("invalid_input", EXIT_USAGE, message),
            Error::Structure(_)
            | Error::Sampling(_)
            | Error::Degenerate(_)
            | Error::Generation(_)
            | Error::NonFinite { .. } => Self::runtime(message),
        }
    }
}
