use std::io;
use std::path::PathBuf;

/// Process exit codes shared by every subcommand.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VERIFICATION_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: invalid UTF-8 at byte offset {offset}", path.display())]
    InvalidUtf8 { path: PathBuf, offset: u64 },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Core(#[from] bpt_core::Error),
    #[error("bad magic: not an instance file")]
    BadMagic,
    #[error("unsupported instance file version {0}")]
    UnsupportedVersion(u16),
    #[error("vocabulary hash mismatch (file {file:016x}, vocabulary {vocab:016x})")]
    VocabHashMismatch { file: u64, vocab: u64 },
    #[error("checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("unexpected end of records")]
    UnexpectedEnd,
    #[error("trailing bytes after the last record")]
    TrailingBytes,
    #[error("instance {index}: {reason}")]
    InvalidInstance { index: u64, reason: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use bpt_core::Error as C;
        match self {
            Error::Usage(_) => exit::USAGE,
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => exit::USAGE,
            Error::Json { source, .. } if !source.is_io() => exit::USAGE,
            Error::Core(C::InvalidRuleset(_) | C::InvalidConfig(_) | C::TargetTooSmall { .. } | C::ZeroShardSize) => {
                exit::USAGE
            }
            _ => exit::IO,
        }
    }
}
