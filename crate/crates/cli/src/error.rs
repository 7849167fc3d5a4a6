use salforge::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Raised while reading and checking inputs.
    #[error(transparent)]
    Core(#[from] Error),
    /// Raised after validation, while doing the work.
    #[error(transparent)]
    Runtime(Error),
    #[error("{failed} of {total} grid cells failed; see failures.csv")]
    PartialFailure { failed: usize, total: usize },
}

impl CliError {
    /// 1 for anything caught while validating inputs, 2 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Json(_)
                | Error::MissingResource(_) => 1,
                _ => 2,
            },
            CliError::Runtime(_) | CliError::PartialFailure { .. } => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub trait AtRuntime<T> {
    fn at_runtime(self) -> CliResult<T>;
}

impl<T> AtRuntime<T> for salforge::Result<T> {
    fn at_runtime(self) -> CliResult<T> {
        self.map_err(CliError::Runtime)
    }
}
