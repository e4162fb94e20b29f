use std::io;
use std::path::PathBuf;

use crate::features::FeatureError;

pub type Result<T, E = VslanError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum VslanError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("feature file {path}: {source}")]
    Feature {
        path: PathBuf,
        #[source]
        source: FeatureError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("reward service unavailable: {0}")]
    RewardUnavailable(String),
    #[error("reward service protocol error: {0}")]
    RewardProtocol(String),
    #[error(transparent)]
    Core(#[from] vslan_core::Error),
}

impl VslanError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        use vslan_core::Error as C;
        match self {
            Self::Config(_) => 2,
            Self::Data(_) | Self::Feature { .. } | Self::Io { .. } => 3,
            Self::Numeric(_) => 4,
            Self::RewardUnavailable(_) | Self::RewardProtocol(_) => 5,
            Self::Core(C::Config(_)) => 2,
            Self::Core(C::NonFinite { .. }) => 4,
            Self::Core(C::Reward(_)) => 5,
            Self::Core(_) => 3,
        }
    }
}
