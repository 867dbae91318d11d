use std::io;
use std::process::ExitCode;

use thiserror::Error;

use copi_core::CopiError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config file {path}: {detail}")]
    ConfigFile { path: String, detail: String },

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },

    #[error(transparent)]
    Core(#[from] CopiError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for bad invocations and configs, 3 for unreadable or corrupt
    /// inputs, 4 when training diverged, 1 for anything else.
    pub fn exit_code(&self) -> ExitCode {
        let code = match self {
            CliError::Usage(_) | CliError::ConfigFile { .. } => 2,
            CliError::Core(CopiError::Config(_) | CopiError::InvalidArgument(_)) => 2,
            CliError::Core(
                CopiError::Read { .. } | CopiError::Format { .. } | CopiError::Checkpoint(_),
            ) => 3,
            CliError::Core(CopiError::Diverged { .. }) => 4,
            _ => 1,
        };
        ExitCode::from(code)
    }
}

/// Attaches `path` to an IO error.
pub fn io_at(path: &std::path::Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}
