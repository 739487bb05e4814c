use calibra_core::CalibraError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid config. Exit status 2.
    #[error("{0}")]
    Usage(String),
    /// The computation itself failed. Exit status 1.
    #[error(transparent)]
    Core(#[from] CalibraError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(_) | CliError::Output { .. } => 1,
        }
    }
}
