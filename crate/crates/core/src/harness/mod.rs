//! Config-driven experiment runner behind the `pseudospin` binary.

pub mod config;
pub mod output;
pub mod run;
pub mod verify;

use std::path::{Path, PathBuf};

pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use run::{execute, Command, RunOptions, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Model {
        context: String,
        source: crate::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn model(context: impl Into<String>, source: crate::Error) -> Self {
        Self::Model {
            context: context.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 3,
        }
    }
}
