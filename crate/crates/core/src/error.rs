use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid dictionary: {0}")]
    Dictionary(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("unknown category `{category}` for variable `{variable}`")]
    UnknownCategory { variable: String, category: String },

    #[error("missing column `{0}` in record header")]
    MissingColumn(String),

    #[error("row {row}: value `{value}` is not a category of `{variable}`")]
    InvalidValue {
        row: u64,
        variable: String,
        value: String,
    },

    #[error("row {row}: missing value for `{variable}` and no `unknown` category to fall back on")]
    MissingValue { row: u64, variable: String },

    #[error("row {row}: duplicate record id `{id}`")]
    DuplicateRecord { row: u64, id: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("item `{0}` is not in the item universe")]
    UnknownItem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("rules have mixed consequents")]
    MixedConsequents,

    #[error("forest does not match record set: {0}")]
    ForestMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error: 1 for runtime I/O, 2 for everything
    /// that is a configuration or validation failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            _ => 2,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        if err.is_io_error() {
            match err.into_kind() {
                csv::ErrorKind::Io(source) => Error::io("<csv stream>", source),
                other => Error::Parse(format!("{other:?}")),
            }
        } else {
            Error::Parse(err.to_string())
        }
    }
}
