use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("value {value} of feature `{feature}` at row {row} is out of range")]
    OutOfRange {
        feature: String,
        row: usize,
        value: f64,
    },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("degenerate training: {0}")]
    DegenerateTraining(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no feasible counterfactual found")]
    NotFound,

    #[error("duplicate issuance for subject {subject_id} under model version {model_version}")]
    DuplicateIssuance { subject_id: u64, model_version: u64 },

    #[error("unknown commitment {0}")]
    UnknownCommitment(u64),

    #[error("commitment {id}: cannot move from {from} to {to}")]
    InvalidTransition {
        id: u64,
        from: String,
        to: String,
    },

    #[error("temporal order violated: {0}")]
    TemporalOrder(String),

    #[error("event log error at line {line}: {reason}")]
    EventLog { line: usize, reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
