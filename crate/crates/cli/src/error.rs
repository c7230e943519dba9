use std::path::PathBuf;

use mocap_core::Error as CoreError;
use mocap_net::NetError;
use mocap_refine::RefineError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Refine(#[from] RefineError),

    #[error(transparent)]
    Net(#[from] NetError),
}

fn core_is_io(e: &CoreError) -> bool {
    matches!(e, CoreError::Io { .. } | CoreError::Parse { .. } | CoreError::UnsupportedVersion { .. })
}

impl CliError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for I/O and configuration problems, 1 for everything numeric.
    pub fn exit_code(&self) -> i32 {
        let io = match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Csv { .. } => true,
            CliError::Core(e) => core_is_io(e),
            CliError::Refine(RefineError::Core(e)) => core_is_io(e),
            CliError::Refine(_) => false,
            CliError::Net(NetError::Core(e)) => core_is_io(e),
            CliError::Net(e) => matches!(e, NetError::Io { .. } | NetError::Parse(_) | NetError::UnsupportedVersion { .. }),
        };
        if io {
            2
        } else {
            1
        }
    }
}
