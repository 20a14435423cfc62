use std::path::PathBuf;

use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] gradshift::Error),
    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: gradshift::Error,
    },
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn core_code(e: &gradshift::Error) -> i32 {
    use gradshift::Error as E;
    match e {
        E::Diverged(_) => 3,
        E::Io(_) => 1,
        _ => 2,
    }
}

impl CliError {
    /// 2 for bad input, 3 for divergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Core(e) | CliError::Run { source: e, .. } => core_code(e),
            CliError::Checkpoint { .. } | CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Core(gradshift::Error::Diverged(_)) | CliError::Run { source: gradshift::Error::Diverged(_), .. } => {
                "divergence"
            }
            CliError::Core(_) | CliError::Run { .. } => "input",
            CliError::Checkpoint { .. } => "checkpoint",
            CliError::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
