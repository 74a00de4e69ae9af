//! File formats, stream IO and the command-line frontend for `duet-core`.

pub mod cli;
pub mod error;
pub mod io;
pub mod outputs;
pub mod report;

pub use error::CliError;
