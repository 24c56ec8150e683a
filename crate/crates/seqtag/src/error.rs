//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/tensor dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric argument is outside its valid range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input data; `line` is 1-based within the parsed text.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A tag string is not part of the label vocabulary.
    #[error("unknown tag: {0}")]
    Vocab(String),

    /// A caller violated an operation's contract (e.g. invalid BIO input).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Gold and predicted data do not align; `sentence` is the 0-based index
    /// of the first offending sentence.
    #[error("alignment error at sentence {sentence}: {msg}")]
    Alignment { sentence: usize, msg: String },

    /// A model file is not in the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// A model file is damaged or truncated.
    #[error("corrupt model file: {0}")]
    Corrupt(String),

    /// Invalid training or CLI configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 i/o, 3 data/alignment, 4 config.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::Parse { .. }
            | Error::Vocab(_)
            | Error::Contract(_)
            | Error::Alignment { .. }
            | Error::Format(_)
            | Error::Corrupt(_)
            | Error::Shape(_) => 3,
            Error::Config(_) | Error::Domain(_) => 4,
        }
    }
}
