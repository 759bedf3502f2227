use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("simulation diverged at t = {time:.4} s: {detail}")]
    SimulationDiverged { time: f64, detail: String },

    #[error("update aborted: {0}")]
    UpdateAborted(String),

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint error ({path}): {message}")]
    Checkpoint { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
