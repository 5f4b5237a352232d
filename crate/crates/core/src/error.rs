use thiserror::Error;

#[derive(Debug, Error)]
pub enum AvError {
    #[error(transparent)]
    Tensor(#[from] avsep_tensor::TensorError),

    #[error(transparent)]
    Dsp(#[from] avsep_dsp::DspError),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png: {0}")]
    Png(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AvError>;

pub(crate) fn data_err(msg: impl Into<String>) -> AvError {
    AvError::Data(msg.into())
}
