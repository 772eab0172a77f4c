use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Io(String),

    /// A check ran and reported a violation.
    #[error("check failed: {0}")]
    Failed(String),

    #[error(transparent)]
    Core(#[from] mlgib::Error),
}

impl CliError {
    /// 0 success, 1 validation or property failure, 2 I/O or config error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Failed(_) => 1,
            CliError::Core(e) => match e {
                mlgib::Error::Io { .. } | mlgib::Error::Parse { .. } | mlgib::Error::Json(_) => 2,
                _ => 1,
            },
        }
    }
}
