use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("point is at or behind the camera plane (z = {z})")]
    BehindCamera { z: f64 },

    #[error("silhouette is empty: no bone projects in front of the camera")]
    EmptySilhouette,

    #[error("unsupported format version {found:?} (expected {expected:?})")]
    UnsupportedVersion { found: String, expected: &'static str },

    #[error("failed to parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
