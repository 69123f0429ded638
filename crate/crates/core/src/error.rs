use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or sampler received a parameter outside its domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A context, price or other per-period input lies outside the model domain.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("aggregator capacity of {capacity} updates exhausted")]
    Capacity { capacity: u64 },

    #[error("model error: {0}")]
    Model(String),

    #[error("policy state error: {0}")]
    State(String),

    /// The caller broke the choose-then-update protocol of a policy.
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("arithmetic error: {0}")]
    Arithmetic(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            _ => 2,
        }
    }
}
