use spikefuse_tensor::TensorError;
use thiserror::Error;

use crate::event_io::EventIoError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    EventIo(#[from] EventIoError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value in parameter `{0}`")]
    NonFinite(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
