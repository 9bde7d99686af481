use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic {
        expected: &'static str,
        found: [u8; 4],
    },
    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u8 },
    #[error("truncated file: need {expected} bytes, have {actual}")]
    TruncatedFile { expected: u64, actual: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("manifest has no id_train entry")]
    MissingIdTrain,
    #[error("manifest has {0} id_train entries, expected exactly one")]
    DuplicateIdTrain(usize),
    #[error("unknown role {0:?} (expected id_train, id_test or ood)")]
    UnknownRole(String),
    #[error("manifest has no {0} entry")]
    MissingSplit(&'static str),
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] caps_ood_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        use caps_ood_core::Error as Core;
        match self {
            Error::Usage(_) | Error::Core(Core::InvalidConfig(_)) => 1,
            Error::Core(Core::NonFiniteLoss { .. }) => 3,
            _ => 2,
        }
    }
}
