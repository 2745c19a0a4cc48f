use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
///
/// The variants are grouped so a front end can map them onto exit codes:
/// usage problems, bad input data, and internal/numeric failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible tensor or image extents.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A value outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),
    /// The API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    /// NaN/Inf encountered during training.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Usage(_) | Error::Config(_) => ErrorKind::Usage,
            Error::Io { .. } | Error::Image { .. } | Error::Checkpoint(_) | Error::Domain(_) => {
                ErrorKind::Data
            }
            Error::Dimension(_) | Error::Numeric(_) => ErrorKind::Internal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Internal,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
