use std::path::PathBuf;

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("sequence of {frames} frames is shorter than the kernel width {kernel}")]
    SequenceTooShort { frames: usize, kernel: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite gradient in {layer}")]
    NonFiniteGradient { layer: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unsupported checkpoint format {found:?} (expected {expected:?})")]
    UnsupportedVersion { found: String, expected: &'static str },

    #[error("failed to parse checkpoint: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] mocap_core::Error),
}
