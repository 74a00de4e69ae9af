use std::path::PathBuf;

use duet_core::ErrorKind;

use crate::io::IoError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;
pub const EXIT_INVARIANT: u8 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flag value that the argument parser could not catch on its own.
    #[error("{flag}: {reason}")]
    Usage { flag: &'static str, reason: String },
    #[error(transparent)]
    Core(#[from] duet_core::Error),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: IoError,
    },
}

impl CliError {
    pub fn usage(flag: &'static str, reason: impl ToString) -> Self {
        CliError::Usage {
            flag,
            reason: reason.to_string(),
        }
    }

    pub fn file(path: impl Into<PathBuf>, source: impl Into<IoError>) -> Self {
        CliError::File {
            path: path.into(),
            source: source.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage { .. } => EXIT_USAGE,
            CliError::File { .. } => EXIT_INPUT,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Input => EXIT_INPUT,
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Invariant => EXIT_INVARIANT,
            },
        }
    }
}
