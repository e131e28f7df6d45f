use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("relation contains a cycle through elements {0} and {1}")]
    Cycle(usize, usize),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{what} needs {needed}, budget is {limit}")]
    Budget {
        what: String,
        needed: usize,
        limit: usize,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
