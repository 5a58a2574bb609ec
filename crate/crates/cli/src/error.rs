use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The experiment file or a flag is unusable; nothing was run.
    #[error("{0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// Something went wrong while running or reading runs.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for configuration problems, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            context: path.display().to_string(),
            source,
        }
    }
}
