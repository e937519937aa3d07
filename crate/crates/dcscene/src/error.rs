use std::fmt;
use std::path::{Path, PathBuf};

use dcscene_core::CoreError;

use crate::dcse::DecodeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes of the command line.
pub mod exit {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const MISSING_INPUT: u8 = 3;
    pub const FORMAT: u8 = 4;
    pub const INTEGRITY: u8 = 5;
}

/// Problem with a single line of a line-oriented file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineError {
    Malformed(String),
    Integrity(String),
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineError::Malformed(msg) => write!(f, "malformed: {msg}"),
            LineError::Integrity(msg) => write!(f, "integrity violation: {msg}"),
        }
    }
}

impl std::error::Error for LineError {}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("{}: {source}", path.display())]
    Dcse {
        path: PathBuf,
        #[source]
        source: DecodeError,
    },

    #[error("{}:{line}: {source}", path.display())]
    Line {
        path: PathBuf,
        line: usize,
        source: LineError,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } => exit::IO,
            Error::MissingInput(_) => exit::MISSING_INPUT,
            Error::Dcse { source, .. } if source.is_integrity() => exit::INTEGRITY,
            Error::Dcse { .. } => exit::FORMAT,
            Error::Line {
                source: LineError::Integrity(_),
                ..
            } => exit::INTEGRITY,
            Error::Line { .. } | Error::Config(_) => exit::FORMAT,
            Error::Usage(_) => exit::USAGE,
            Error::Verification(_) => exit::INTEGRITY,
            Error::Core(e) if e.is_integrity() => exit::INTEGRITY,
            Error::Core(_) => exit::USAGE,
        }
    }
}
