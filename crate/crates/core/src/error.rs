use thiserror::Error;

/// Errors raised while decoding a [`SketchFrame`](crate::distributed::SketchFrame).
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error(
        "payload of {actual} bytes does not match the {expected} bytes implied by the config block"
    )]
    PayloadSize { expected: usize, actual: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration ({constraint}): {detail}")]
    ConfigInvalid {
        constraint: &'static str,
        detail: String,
    },

    #[error("restore overflow in SEA {rp}: more than {cap} surviving candidate tuples")]
    RestoreOverflow { rp: u32, cap: u64 },

    #[error("frame error: {0}")]
    Frame(#[from] FrameError),

    #[error("merge incompatible: {0}")]
    MergeIncompatible(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Broad class of the error, used by front-ends to pick an exit status.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::ConfigInvalid { .. } => ErrorClass::Config,
            Error::RestoreOverflow { .. }
            | Error::Frame(_)
            | Error::MergeIncompatible(_)
            | Error::Data(_)
            | Error::UndefinedMetric(_)
            | Error::Io(_) => ErrorClass::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
