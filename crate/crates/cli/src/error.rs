use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<nlqft_core::Error> for CliError {
    fn from(e: nlqft_core::Error) -> Self {
        match e {
            nlqft_core::Error::Numeric(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
