//! CLI error classes with a fixed exit-code contract:
//! 0 ok, 2 config, 3 numeric, 4 selection, 1 anything else.

use unlearn_core::Error as CoreError;

use crate::config::ConfigError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Selection(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Selection(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
            CliError::Selection(m) => write!(f, "selection error: {m}"),
            CliError::Other(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Numeric { .. } => CliError::Numeric(e.to_string()),
            CoreError::InvalidRule(_) | CoreError::UndefinedMetric(_) => {
                CliError::Selection(e.to_string())
            }
            CoreError::InvalidInput(_)
            | CoreError::Parse { .. }
            | CoreError::Checkpoint(_)
            | CoreError::Io(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
