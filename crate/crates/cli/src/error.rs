use std::path::PathBuf;

use dejavu_core::Error as CoreError;

/// Failure of a subcommand, carrying the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("cannot write {path}: {msg}")]
    Output { path: PathBuf, msg: String },

    #[error("{path}: {msg}")]
    Input { path: PathBuf, msg: String },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn output(path: impl Into<PathBuf>, e: impl ToString) -> Self {
        CliError::Output {
            path: path.into(),
            msg: e.to_string(),
        }
    }

    pub fn input(path: impl Into<PathBuf>, e: impl ToString) -> Self {
        CliError::Input {
            path: path.into(),
            msg: e.to_string(),
        }
    }

    /// 1 usage, 2 validation/format/io, 3 alignment/data, 4 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Output { .. } | CliError::Input { .. } => 2,
            CliError::Core(e) => match e {
                CoreError::Argument(_) => 1,
                CoreError::Io { .. }
                | CoreError::Format { .. }
                | CoreError::FormatLine { .. }
                | CoreError::Validation(_)
                | CoreError::Contract(_) => 2,
                CoreError::Alignment { .. } | CoreError::Data(_) => 3,
                CoreError::Training { .. } => 4,
            },
        }
    }
}
