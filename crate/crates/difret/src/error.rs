use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", .path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", .path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: dimension mismatch: expected {expected}, got {got}", .path.display())]
    DimensionMismatch { path: PathBuf, expected: usize, got: usize },
    #[error("{}: produced by config {found}, current config is {expected} (use --force to override)", .path.display())]
    StaleArtifact { path: PathBuf, expected: String, found: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] difret_core::Error),
}

impl Error {
    /// Short machine-readable category used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Format { .. } => "format",
            Error::DimensionMismatch { .. } => "dimension",
            Error::StaleArtifact { .. } => "stale",
            Error::Config(_) => "config",
            Error::Core(difret_core::Error::Diverged { .. }) => "diverged",
            Error::Core(_) => "core",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Error {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
