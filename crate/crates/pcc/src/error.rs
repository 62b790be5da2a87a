use std::path::{Path, PathBuf};

/// Errors from the std side: files, configuration and everything the core
/// can report.
#[derive(Debug, thiserror::Error)]
pub enum PccError {
    #[error(transparent)]
    Core(#[from] pcc_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
}

impl PccError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Self::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 usage/config, 3 I/O or data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        use pcc_core::Error as E;
        match self {
            Self::Config(_) | Self::Usage(_) => 2,
            Self::Numerical(_) => 4,
            Self::Io { .. } | Self::Parse { .. } | Self::Format { .. } => 3,
            Self::Core(e) => match e {
                E::NonFiniteLoss { .. } | E::NonFinite(_) | E::Asymmetric(_) | E::DetachedGraph | E::BackwardTwice => 4,
                E::EmptyForeground(_) | E::EmptyBank | E::EmptyCloud | E::DegenerateCloud | E::Checkpoint(_) => 3,
                _ => 2,
            },
        }
    }
}

pub type Result<T, E = PccError> = std::result::Result<T, E>;

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| PccError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| PccError::io(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PccError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| PccError::io(path, e))
}
