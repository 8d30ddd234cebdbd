use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("input of length {len} exceeds maximum sequence length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("model already has an adaptation attached: {0}")]
    AlreadyAdapted(String),

    #[error("model has no LoRA adaptation attached")]
    NoLora,

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("frozen parameter `{0}` was modified")]
    FrozenModified(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("contract violated: {0}")]
    Contract(&'static str),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
