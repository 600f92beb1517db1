use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A feature or dataset recipe cannot be realized (empty pool, no room in the sequence, vocab too small).
    #[error("impossible constraint: {0}")]
    ImpossibleConstraint(String),

    /// Rejection sampling gave up before hitting the requested feature pattern.
    #[error("unsatisfiable target after {attempts} attempts: {target}")]
    UnsatisfiableTarget { target: String, attempts: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("symbol {symbol} out of range for vocab of {vocab}")]
    SymbolOutOfRange { symbol: u32, vocab: usize },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown feature name `{0}`")]
    UnknownFeature(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn impossible(msg: impl Into<String>) -> Self {
        Error::ImpossibleConstraint(msg.into())
    }
}
