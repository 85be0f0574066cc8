use std::fmt;

use swinfundus::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// Unexpected internal failure.
    pub const FAILURE: u8 = 1;
    /// Bad arguments, configuration, or dataset layout.
    pub const CONFIG: u8 = 2;
    pub const UNREADABLE_IMAGE: u8 = 3;
    pub const NON_FINITE: u8 = 4;
    /// Parameter file does not match the model configuration.
    pub const SCHEMA: u8 = 5;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: exit::CONFIG,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Image { .. } => exit::UNREADABLE_IMAGE,
            Error::NonFinite(_) => exit::NON_FINITE,
            Error::Schema(_) | Error::Format(_) => exit::SCHEMA,
            Error::InvalidArgument(_) | Error::Io { .. } | Error::Json(_) => exit::CONFIG,
            _ => exit::FAILURE,
        };
        let message = match &e {
            Error::Schema(report) => {
                let mut msg =
                    String::from("parameter file does not match the model configuration:");
                for p in &report.missing {
                    msg.push_str(&format!("\n  missing     {p}"));
                }
                for (p, want, got) in &report.misshaped {
                    msg.push_str(&format!(
                        "\n  misshaped   {p}: expected {want:?}, found {got:?}"
                    ));
                }
                for p in &report.unexpected {
                    msg.push_str(&format!("\n  unexpected  {p}"));
                }
                msg
            }
            _ => e.to_string(),
        };
        CliError { code, message }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
