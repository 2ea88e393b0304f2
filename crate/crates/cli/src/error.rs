use std::path::PathBuf;

use thiserror::Error;
use vfl_recon_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 when the search dimension exceeds the
    /// cap, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(CoreError::DimensionCap { .. }) => 3,
            CliError::Core(
                CoreError::MissingLabel(_)
                | CoreError::OverlappingSplit(_)
                | CoreError::InvalidSplit(_)
                | CoreError::InvalidColumns(_)
                | CoreError::InvalidArchitecture(_),
            ) => 2,
            _ => 1,
        }
    }
}
