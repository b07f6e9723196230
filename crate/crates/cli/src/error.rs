use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    UnknownModel(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::UnknownModel(_) => "unknown_model",
            CliError::Io(_) => "io",
            CliError::Solver(_) => "solver",
        }
    }

    /// `bsmp-error: <kind>: <message>` on a single line.
    pub fn line(&self) -> String {
        let msg = self
            .to_string()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        format!("bsmp-error: {}: {msg}", self.kind())
    }
}

impl From<bsmp_core::Error> for CliError {
    fn from(e: bsmp_core::Error) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
