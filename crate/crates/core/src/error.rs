use std::path::PathBuf;

/// Errors raised by the tensor engine, model builders and file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// A stored artifact does not fit the model it is being loaded into.
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("format error in record {record:?}: {msg}")]
    Format { record: Option<String>, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format {
            record: None,
            msg: msg.into(),
        }
    }

    pub(crate) fn format_in(record: &str, msg: impl Into<String>) -> Self {
        Error::Format {
            record: Some(record.to_string()),
            msg: msg.into(),
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
