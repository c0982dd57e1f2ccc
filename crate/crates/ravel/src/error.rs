use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ravel_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: unsupported image: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: unsupported model version `{found}` (this build reads `{expected}`)", path.display())]
    UnsupportedVersion {
        path: PathBuf,
        found: String,
        expected: &'static str,
    },

    #[error("sample `{sample_id}`: {source}")]
    Load {
        sample_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<Path>, line: usize, message: impl ToString) -> Self {
        Self::Parse {
            path: path.as_ref().to_path_buf(),
            line,
            message: message.to_string(),
        }
    }

    /// Process exit status: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io { .. } => 2,
            Self::Load { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
