use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] unetpp_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// Malformed file; `at` is a byte offset or `line N`.
    #[error("{}: {at}: {msg}", path.display())]
    Format { path: PathBuf, at: String, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint does not match the configuration: {0}")]
    Compat(String),
}

impl Error {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn at_byte(path: &Path, offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            at: format!("byte {offset}"),
            msg: msg.into(),
        }
    }

    pub(crate) fn at_line(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            at: format!("line {line}"),
            msg: msg.into(),
        }
    }

    /// Process exit status: 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        use unetpp_core::Error as E;
        match self {
            Error::Config(_) => 2,
            Error::Core(E::Config(_) | E::Spec { .. } | E::Range { .. } | E::Generation(_)) => 2,
            _ => 1,
        }
    }
}
