//! Standard-library companion to `bwshare-core`: catalog files, CSV
//! emission/ingestion, unit parsing, and the `bwshare` command-line tool.

pub mod catalog_file;
pub mod commands;
pub mod csvio;
pub mod units;

pub use commands::{run, Cli};
