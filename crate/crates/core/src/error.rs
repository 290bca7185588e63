use thiserror::Error;

/// Errors raised anywhere in the navigation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("softmax row {row} is fully masked")]
    DegenerateMask { row: usize },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("node {to} is unreachable from node {from}")]
    Disconnected { from: usize, to: usize },
    #[error("episode generation exhausted after {attempts} attempts")]
    GenerationExhausted { attempts: usize },
    #[error("token {token} outside vocabulary of size {size}")]
    Vocab { token: usize, size: usize },
    #[error("sequence length {len} exceeds configured maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("illegal move from node {from} to node {to}")]
    IllegalMove { from: usize, to: usize },
    #[error("label node {0} is not a valid action in the memory graph")]
    Label(usize),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("unknown environment {0:?}")]
    UnknownEnv(String),
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("non-finite loss at step {step}; batch dump: {dump}")]
    NonFiniteLoss { step: usize, dump: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
