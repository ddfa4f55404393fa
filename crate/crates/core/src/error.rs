use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value produced by `{op}`{}", node.map(|n| format!(" (tape node {n})")).unwrap_or_default())]
    NonFinite { op: &'static str, node: Option<usize> },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("stability violation: {0}")]
    Stability(String),

    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("unreliable gradient check: {0}")]
    Unreliable(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(field: &str, msg: impl Into<String>) -> Self {
        Error::Config { field: field.to_string(), msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_file(path: impl Into<PathBuf>, source: Error) -> Self {
        match source {
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile { path: path.into(), source: Box::new(e) },
        }
    }
}
