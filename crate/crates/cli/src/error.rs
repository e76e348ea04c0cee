use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage `{stage}` needs {missing}; run `{producer}` first")]
    StageOrder { stage: &'static str, producer: &'static str, missing: PathBuf },
    #[error(transparent)]
    Core(#[from] yoas_core::Error),
    #[error(transparent)]
    Nn(#[from] yoas_nn::NnError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Artifact { path: PathBuf, msg: String },
}

impl CliError {
    /// 1 for problems with the invocation or configuration, 2 for failures
    /// while a stage runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::StageOrder { .. } => 1,
            CliError::Core(yoas_core::Error::Config(_)) | CliError::Nn(yoas_nn::NnError::Config(_)) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
