//! Batch side of nerloop: experiment files, simulation matrices, learning
//! curve reports and project import/export. The `nerloop` binary is a thin
//! shell over these.

pub mod config;
pub mod project;
pub mod report;
pub mod simulate;

use std::path::{Path, PathBuf};

use nerloop_core::active::LoopError;
use nerloop_core::corpus::CorpusError;
use nerloop_core::crf::CrfError;
use nerloop_core::query::UnknownStrategy;
use nerloop_service::config::ConfigError;
use nerloop_service::ProjectError;
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid experiment file: {0}")]
    Config(String),
    #[error(transparent)]
    Strategy(UnknownStrategy),
    #[error(transparent)]
    Service(#[from] ConfigError),
    #[error("{path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error(transparent)]
    Split(#[from] CorpusError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error("{path}: line {line}: {message}")]
    Log { path: PathBuf, line: usize, message: String },
    #[error("no round logs (*.jsonl) in {0}")]
    NoLogs(PathBuf),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
