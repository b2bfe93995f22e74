use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// A malformed file; `section` names the part that failed to parse or
    /// verify.
    #[error("{}: {section}: {message}", path.display())]
    Format { path: PathBuf, section: String, message: String },
    #[error(transparent)]
    Core(#[from] fngram_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

pub(crate) fn format_err(path: &Path, section: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), section: section.into(), message: message.into() }
}
