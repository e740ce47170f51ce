//! Run configuration, the per-thread run driver, offline evaluation of run
//! outputs and the MoA layer sweep.

mod config;
mod evaluate;
mod run;
mod sweep;

pub use config::*;
pub use evaluate::*;
pub use run::*;
pub use sweep::*;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::embedding::EmbeddingError;
use crate::eval::EvalError;
use crate::exemplar::SelectionError;
use crate::gateway::GatewayError;
use crate::prompting::PromptError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("predictions for threads missing from the gold corpus: {}", .0.join(", "))]
    Orphans(Vec<String>),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}
