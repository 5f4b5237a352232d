use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("{op}: {detail}")]
    InvalidInput { op: &'static str, detail: String },

    #[error("{op}: input has {len} samples, needs at least {min}")]
    TooShort { op: &'static str, len: usize, min: usize },

    #[error("Gram matrix of shifted references is singular at filter_len {filter_len}; use a smaller filter_len")]
    SingularGram { filter_len: usize },

    #[error("estimate has no component along the target reference")]
    ZeroTarget,

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("spectrogram dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DspError>;

pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> DspError {
    DspError::InvalidInput { op, detail: detail.into() }
}
