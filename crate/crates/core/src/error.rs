use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("character range {start}..{end} is out of bounds for a document of {len} characters")]
    Range {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("token range {start}..{end} is invalid for a document of {len} tokens")]
    TokenRange {
        start: usize,
        end: usize,
        len: usize,
    },

    /// A rule or data file could not be parsed. `line` is 1-based when known.
    #[error("{origin}{}: {message}", .line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        origin: String,
        line: Option<usize>,
        message: String,
    },

    #[error("rule `{id}`: {message}")]
    Rule { id: String, message: String },

    #[error("duplicate rule id `{0}`")]
    DuplicateRule(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("dictionary: {0}")]
    Dictionary(String),

    #[error("index cache: {0}")]
    Cache(String),

    #[error("document rejected: {0}")]
    Document(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        origin: impl Into<String>,
        line: Option<usize>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            origin: origin.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn rule(id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Rule {
            id: id.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the filesystem rather than by content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
