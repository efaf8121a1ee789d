use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("scene `{scene}`, field `{field}`: {message}")]
    Invalid {
        scene: String,
        field: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("scene has no `{0}` experiment section")]
    MissingExperiment(&'static str),

    #[error(transparent)]
    Sim(#[from] contactdiff::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Invalid { .. } | CliError::MissingExperiment(_) => 3,
            CliError::Sim(contactdiff::Error::InvalidProblem(_) | contactdiff::Error::InvalidModel(_)) => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
