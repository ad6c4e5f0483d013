use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("insufficient pool: {0}")]
    Insufficient(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Insufficient(_) => 3,
            CliError::Io(_) => 4,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub fn read(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
