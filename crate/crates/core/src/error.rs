use alloc::string::String;

/// Failures while decoding or encoding `.duet` / `.dueta` byte streams.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype code {0:#04x}")]
    UnknownDType(u8),
    #[error("invalid dimension count {0} (at most 8)")]
    InvalidRank(usize),
    #[error("invalid dimension size {0} (must be >= 1)")]
    InvalidDim(u64),
    #[error("truncated stream: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("declared element count {declared} exceeds cap {cap}")]
    TooLarge { declared: u128, cap: u64 },
    #[error("non-finite element at flat index {0}")]
    NonFinite(usize),
    #[error("header padding byte must be zero, found {0:#04x}")]
    BadPadding(u8),
    #[error("shape {shape_len} elements does not match data length {data_len}")]
    ShapeMismatch { shape_len: usize, data_len: usize },
    #[error("invalid entry name {0:?} (expected [a-z0-9_]{{1,64}})")]
    InvalidName(String),
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("entry {name:?}: declared payload length {declared} but record occupies {actual}")]
    PayloadLength { name: String, declared: u64, actual: usize },
    #[error("trailing bytes after record: {0}")]
    TrailingBytes(usize),
}

/// Broad failure class, used by frontends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or missing input data.
    Input,
    /// Inputs are well-formed but dimensions or configuration disagree.
    Config,
    /// An internal consistency check failed. Always a bug.
    Invariant,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("missing archive entry {0:?}")]
    MissingEntry(String),
    #[error("entry {name:?} has wrong dtype or rank: {reason}")]
    BadEntry { name: String, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("negative attention weight in {0}")]
    Negative(&'static str),
    #[error("k = {k} exceeds candidate count {candidates}")]
    KTooLarge { k: usize, candidates: usize },
    #[error("index {index} is not in the residual set")]
    NotResidual { index: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Format(_) | Error::MissingEntry(_) | Error::BadEntry { .. } => ErrorKind::Input,
            Error::NonFinite(_) | Error::Negative(_) => ErrorKind::Input,
            Error::Invariant(_) => ErrorKind::Invariant,
            _ => ErrorKind::Config,
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
