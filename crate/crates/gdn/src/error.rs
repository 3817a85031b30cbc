use thiserror::Error;

pub type Result<T> = std::result::Result<T, GdnError>;

#[derive(Debug, Error)]
pub enum GdnError {
    #[error(transparent)]
    Core(#[from] geoflow_core::Error),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("latent rollout produced non-finite values at step {step}")]
    RolloutDiverged { step: usize },

    #[error("non-finite loss in epoch {epoch} at sample {sample}: {detail}")]
    NonFiniteLoss { epoch: usize, sample: usize, detail: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
