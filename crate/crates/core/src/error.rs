use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("gradients requested but {0}")]
    LossNotScalar(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("embeddings must be l2-normalized: row {row} has norm {norm}")]
    NotNormalized { row: usize, norm: f64 },

    #[error("estimated MI {bits} bits exceeds the log2(2K-1) = {bound} bits ceiling")]
    BoundViolation { bits: f64, bound: f64 },

    #[error("batch size mismatch: loss was computed at K={loss_k}, caller claims K={claimed}")]
    BatchSizeMismatch { loss_k: usize, claimed: usize },

    #[error("held-out split too small: {required} distinct pairs required, {available} available")]
    SplitTooSmall { required: usize, available: usize },

    #[error("theorem premise not met: {0}")]
    Premise(String),

    #[error("undefined statistic: {0}")]
    Degenerate(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: usize,
        reason: String,
        last_good: Box<crate::trainer::EncoderCheckpoint>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
