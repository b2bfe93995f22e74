//! File formats, checkpoints and the `fngram` command-line driver built on
//! [`fngram_core`].

pub mod checkpoint;
pub mod cli;
pub mod config_file;
pub mod error;
pub mod report;
pub mod shard;
pub mod vocab_file;

pub use error::{Error, Result};
