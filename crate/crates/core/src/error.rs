use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checksum mismatch in {what}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        what: &'static str,
        stored: u32,
        computed: u32,
    },

    #[error("unsupported codec id {0}")]
    UnsupportedCodec(u8),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("bad magic {found:?}, expected \"CHR1\"")]
    BadMagic { found: [u8; 4] },

    #[error("archive version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("isovalue {k} is not a stored candidate")]
    NoSuchIsovalue { k: f64 },

    #[error("requested accuracy {requested} exceeds stored accuracy {stored}")]
    InsufficientAccuracy { requested: f64, stored: f64 },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimsMismatch { left: [usize; 3], right: [usize; 3] },

    #[error("sample type mismatch: data holds {found}, caller expects {expected}")]
    DtypeMismatch {
        found: &'static str,
        expected: &'static str,
    },

    #[error("candidate isovalue {k} lies outside the field range [{vmin}, {vmax}]")]
    CandidateOutOfRange { k: f64, vmin: f64, vmax: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
