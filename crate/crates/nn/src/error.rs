use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("step {t} outside 1..={max}")]
    Index { t: usize, max: usize },
    #[error(transparent)]
    Core(#[from] yoas_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::Shape { op, detail: detail.into() }
}
