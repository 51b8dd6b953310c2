use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped by the layer that raises them; [`Error::kind`] folds
/// them into the coarse categories the command line maps onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    // numeric core
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("index {index} out of range for {what} of size {size}")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("invalid mask: row {row} has no unmasked entry")]
    InvalidMask { row: usize },
    #[error("loss has no active positions")]
    EmptyLoss,
    #[error("expected a scalar, got shape {shape:?}")]
    Rank { shape: Vec<usize> },
    #[error("function is not deterministic: two evaluations gave {first} and {second}")]
    Determinism { first: f64, second: f64 },
    #[error("numeric fault: {0}")]
    NumericFault(String),

    // tokenizer / vocab
    #[error("vocab line {line}: {message}")]
    VocabFormat { line: usize, message: String },
    #[error("vocab is missing special token {0}")]
    MissingSpecial(String),

    // html / xpath
    #[error("html parse error at byte {offset}: {message}")]
    HtmlParse { offset: usize, message: String },
    #[error("unexpected end of input at byte {offset} (open element <{open}>)")]
    UnexpectedEof { offset: usize, open: String },
    #[error("xpath depth {depth} exceeds maximum {max}: {path}")]
    DepthOverflow {
        depth: usize,
        max: usize,
        path: String,
    },
    #[error("malformed xpath {0:?}")]
    XPathSyntax(String),

    // embeddings / model
    #[error("{what} {value} out of range (limit {limit})")]
    Range {
        what: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("invalid box geometry: {0}")]
    Geometry(String),
    #[error("expected {expected} {what}, got {got}")]
    Arity {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),

    // data & checkpoints
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),
    #[error("checkpoint parameter {name}: {message}")]
    CheckpointMismatch { name: String, message: String },
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::NumericFault(_) | Error::Determinism { .. } => ErrorKind::Numeric,
            Error::InFile { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_file(path: impl Into<PathBuf>, source: Error) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(source),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
