use thiserror::Error;

/// Errors surfaced by the core pipeline.
#[derive(Debug, Error)]
pub enum SealError {
    #[error("episode already finished (step {step}, success {success})")]
    EpisodeFinished { step: usize, success: bool },

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("unsupported task instruction: {0:?}")]
    UnsupportedTask(String),

    #[error("empty task instruction")]
    EmptyInstruction,

    #[error("failed to parse sub-goal decomposition from backend response: {raw:?}")]
    DecompositionParse { raw: String },

    #[error("failed to label state {state_index}: {reason}")]
    Labeling { state_index: usize, reason: String },

    #[error("labeling backend error: {0}")]
    Backend(String),

    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("environment/checkpoint kind mismatch: {0}")]
    KindMismatch(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SealError>;
