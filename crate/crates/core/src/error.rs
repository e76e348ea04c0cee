use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error at byte {offset} (line {line}): {msg}")]
    Parse { offset: usize, line: usize, msg: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("generator spec error: {0}")]
    Spec(String),
    #[error("invalid window: window {window}, stride {stride}, samples {samples}")]
    InvalidWindow { window: usize, stride: usize, samples: usize },
    #[error("signal has no finite samples")]
    EmptySignal,
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("invalid channel triple: {0}")]
    InvalidTriple(String),
    #[error("plan error: {0}")]
    Plan(String),
    #[error("no model registered for edge {source_channel} -> {target}")]
    ModelMissing { source_channel: String, target: String },
    #[error("model failure: {0}")]
    Model(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
