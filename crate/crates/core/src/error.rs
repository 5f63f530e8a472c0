use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate transaction id {txid}")]
    DuplicateTx { line: usize, txid: String },

    #[error("line {line}: invalid transaction: {message}")]
    Validation { line: usize, message: String },

    #[error("tag file: {0}")]
    Tags(String),

    #[error("invalid generator config: {0}")]
    InvalidConfig(String),

    #[error("unknown measure key `{0}`")]
    UnknownMeasure(String),

    #[error("unknown measure variant `{0}`")]
    UnknownVariant(String),

    #[error("measure `{0}` requires a variant (smallest, average or largest)")]
    MissingVariant(String),

    #[error("invalid time range [{from}, {to})")]
    InvalidRange { from: i64, to: i64 },

    #[error("histogram needs at least one bin")]
    ZeroBins,

    #[error("log10 scale requires strictly positive values")]
    NonPositiveLogScale,

    #[error("invalid predicate: lower bound {lo} exceeds upper bound {hi}")]
    InvalidPredicate { lo: f64, hi: f64 },

    #[error("unknown tree node {0}")]
    UnknownNode(usize),

    #[error("tree node {0} is already split")]
    AlreadySplit(usize),

    #[error("the root node cannot be deleted")]
    CannotDeleteRoot,

    #[error("labels must be non-empty")]
    EmptyLabel,

    #[error("malformed tree document: {0}")]
    MalformedDocument(String),

    #[error("clustering needs at least one feature")]
    EmptyFeatures,

    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),

    #[error("k = {k} exceeds the {usable} entities with defined features")]
    KTooLarge { k: usize, usable: usize },

    #[error("clustering was cancelled")]
    Cancelled,

    #[error("cluster result is stale: node {0} changed since clustering")]
    StaleCluster(usize),

    #[error("unknown cluster {0}")]
    UnknownCluster(usize),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error was caused by bad input rather than an internal failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Corpus(_))
    }
}
