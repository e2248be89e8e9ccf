use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: malformed file at byte {offset}: {msg}", path.display())]
    Format { path: PathBuf, offset: u64, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] brainstate_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Error::Json { path: path.to_path_buf(), source }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        Error::Csv { path: path.to_path_buf(), source }
    }

    /// Process exit status: 1 for numeric failures inside a computation, 2 for bad input.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Core(e) if e.is_numeric() => 1,
            _ => 2,
        }
    }
}
