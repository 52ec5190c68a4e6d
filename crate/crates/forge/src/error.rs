use std::path::PathBuf;

/// Failures of the artifact layer.
#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing artifacts:\n  {}", .0.join("\n  "))]
    Missing(Vec<String>),
    #[error("inputs come from different configs ({0}); pass --force to evaluate anyway")]
    MixedConfig(String),
    #[error(transparent)]
    Core(#[from] cuap_core::Error),
}

pub type Result<T> = std::result::Result<T, ForgeError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ForgeError {
    let path = path.into();
    move |source| ForgeError::Io { path, source }
}

pub(crate) fn format_err(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> ForgeError {
    ForgeError::Format { path: path.into(), message: message.to_string() }
}
