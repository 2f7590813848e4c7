use std::path::{Path, PathBuf};

pub type Result<T, E = RunError> = std::result::Result<T, E>;

/// Failure of a CLI run, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(uwmmse_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub const EXIT_CONFIG: u8 = 2;
    pub const EXIT_DATA: u8 = 3;
    pub const EXIT_NUMERIC: u8 = 4;

    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => Self::EXIT_CONFIG,
            RunError::Data(_) | RunError::Io { .. } => Self::EXIT_DATA,
            RunError::Numeric(_) => Self::EXIT_NUMERIC,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
        move |source| RunError::Io { path: path.to_path_buf(), source }
    }
}

impl From<uwmmse_core::Error> for RunError {
    fn from(e: uwmmse_core::Error) -> Self {
        if e.is_numeric() {
            RunError::Numeric(e)
        } else {
            RunError::Data(e.to_string())
        }
    }
}
