use thiserror::Error;

/// Failures of a CLI command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no oracle for this configuration: {0}")]
    UnsupportedOracle(String),
    #[error("{failed} of {total} replications failed; see error.json")]
    Sampler { failed: usize, total: usize },
    #[error("TV distance {tv} exceeds threshold {threshold}")]
    Threshold { tv: f64, threshold: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::UnsupportedOracle(_) => 2,
            CliError::Sampler { .. } => 3,
            CliError::Threshold { .. } => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
