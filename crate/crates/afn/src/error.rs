use std::io;
use std::path::PathBuf;

use afn_core::encoder::{ConfigError, ForwardError, WeightsError};
use afn_core::metrics::MetricsError;
use afn_core::wordpiece::{EncodeError, VocabError};

#[derive(Debug, thiserror::Error)]
pub enum AfnError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },

    #[error("cannot read model file {path}: {source}")]
    ModelFile { path: PathBuf, source: io::Error },
    #[error("vocabulary {path}: {source}")]
    Vocab { path: PathBuf, source: VocabError },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("checkpoint {path}: {source}")]
    Weights { path: PathBuf, source: WeightsError },
    #[error("model config {path}: {message}")]
    ModelConfig { path: PathBuf, message: String },
    #[error("model config: {0}")]
    InvalidConfig(#[from] ConfigError),

    #[error("empty sentence")]
    EmptySentence,
    #[error(
        "token count mismatch: sentence A has {} tokens {:?}, sentence B has {} tokens {:?}",
        .a.len(), .a, .b.len(), .b
    )]
    TokenMismatch { a: Vec<String>, b: Vec<String> },
    #[error("at least two prompts are required, got {0}")]
    TooFewPrompts(usize),
    #[error("no tokens left after the {0:?} filter; try --filter all")]
    NothingToRank(&'static str),
    #[error("{0}")]
    Alignment(String),
    #[error("fixture {path}: {message}")]
    Fixture { path: PathBuf, message: String },

    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl AfnError {
    /// Process exit status: 1 usage, 2 input data, 3 model load.
    pub fn exit_code(&self) -> i32 {
        match self {
            AfnError::Usage(_) => 1,
            AfnError::ModelFile { .. }
            | AfnError::Vocab { .. }
            | AfnError::Checkpoint { .. }
            | AfnError::Weights { .. }
            | AfnError::ModelConfig { .. }
            | AfnError::InvalidConfig(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = AfnError> = std::result::Result<T, E>;
