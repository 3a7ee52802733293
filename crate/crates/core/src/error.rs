use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error category, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Format,
    Parameter,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("invalid parameter `{name}`: {message}")]
    Parameter { name: String, message: String },

    #[error("channel {channel} unusable: {message}")]
    UnusableChannel { channel: String, message: String },

    #[error("empty signal: {0}")]
    EmptySignal(String),

    #[error("numerical failure: {message} (residual {residual:.3e})")]
    Solver { message: String, residual: f64 },

    #[error("{0}")]
    Numerical(String),

    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl Error {
    pub fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn parameter(name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Format { .. } => ErrorKind::Format,
            Error::Parameter { .. } | Error::Protocol(_) => ErrorKind::Parameter,
            Error::UnusableChannel { .. } | Error::EmptySignal(_) | Error::Solver { .. } | Error::Numerical(_) => {
                ErrorKind::Numerical
            }
        }
    }
}
