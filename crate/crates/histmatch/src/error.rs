use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("histogram has zero total count")]
    ZeroTotal,

    #[error("histogram length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("active set minus matching set is empty; nothing to separate")]
    EmptyComplement,

    #[error("probability {0} outside (0, 1]")]
    InvalidProbability(f64),

    #[error("deviation slack must be positive, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("value {observed} outside hypergeometric support [{lo}, {hi}]")]
    OutOfSupport { observed: u64, lo: u64, hi: u64 },

    #[error("candidate {0} has no fresh samples this round")]
    MissingTau(u32),

    #[error("unknown attribute: {0}")]
    UnknownAttribute(String),

    #[error("block index {index} out of range ({blocks} blocks)")]
    OutOfRange { index: usize, blocks: usize },

    #[error("dataset contains no rows")]
    EmptyDataset,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unknown candidate value for target: {0}")]
    UnknownCandidate(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("corrupt dataset file: {0}")]
    CorruptFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
