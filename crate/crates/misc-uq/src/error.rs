use std::io;

use misc_uq_core::error::{Error as CoreError, OracleError};

/// Failure of a pipeline command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("invalid file {path}: {reason}")]
    Format { path: String, reason: String },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Format { .. } => 2,
            CliError::Oracle(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    pub fn format(path: impl std::fmt::Display, reason: impl Into<String>) -> CliError {
        CliError::Format {
            path: path.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Oracle(e.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Oracle(o) => o.into(),
            CoreError::MissingEvaluations { ref missing, .. } => {
                let mut msg = e.to_string();
                for (idx, p, why) in missing.iter().take(5) {
                    msg.push_str(&format!("\n  {idx} at {p:?}: {why}"));
                }
                if missing.len() > 5 {
                    msg.push_str(&format!("\n  ... and {} more", missing.len() - 5));
                }
                CliError::Oracle(msg)
            }
            CoreError::NonFiniteStart
            | CoreError::AllStartsFailed(_)
            | CoreError::Numerical(_)
            | CoreError::ZeroPriorWidth(_) => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}
