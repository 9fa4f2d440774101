//! Error type shared across the pipeline.
//!
//! Variants map onto the CLI exit-code contract: input problems exit 2,
//! integrity problems exit 3, domain problems exit 4.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Raw data could not be ingested (empty input, malformed rows).
    Ingestion(String),
    /// A code is missing from its vocabulary.
    Vocabulary(String),
    /// SMILES string contains an unsupported token; position is byte offset.
    MoleculeParse { position: usize, message: String },
    /// Configuration is invalid or infeasible.
    Config(String),
    /// Matrix/vector dimensions do not line up.
    Shape(String),
    /// A computation produced a non-finite value.
    Numerics(String),
    /// Structurally invalid domain data (e.g. a visit with no nodes).
    Data(String),
    /// Checkpoint/bundle hashes do not match.
    Integrity(String),
    /// File-level I/O or parse failure, with file and (1-based) line when known.
    Io(String),
}

impl Error {
    /// Exit code for the CLI contract: 2 input, 3 integrity, 4 domain.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Ingestion(_) | Error::Config(_) | Error::Io(_) | Error::MoleculeParse { .. } => 2,
            Error::Integrity(_) => 3,
            Error::Vocabulary(_) | Error::Data(_) => 4,
            Error::Shape(_) | Error::Numerics(_) => 1,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Ingestion(m) => write!(f, "ingestion error: {m}"),
            Error::Vocabulary(m) => write!(f, "vocabulary error: {m}"),
            Error::MoleculeParse { position, message } => {
                write!(f, "molecule parse error at byte {position}: {message}")
            }
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Numerics(m) => write!(f, "numerics error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Integrity(m) => write!(f, "integrity error: {m}"),
            Error::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
