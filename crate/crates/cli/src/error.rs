use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: hips_core::Error,
    },

    #[error("{0}")]
    Data(String),
}

impl CliError {
    /// 2 usage, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core { source, .. } if source.is_numerical() => 4,
            CliError::Core { .. } | CliError::Data(_) => 3,
        }
    }
}

/// Attaches a description of what was being done to a core error.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for hips_core::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Core { context: what(), source })
    }
}

impl From<hips_core::Error> for CliError {
    fn from(source: hips_core::Error) -> Self {
        CliError::Core { context: "error".into(), source }
    }
}
