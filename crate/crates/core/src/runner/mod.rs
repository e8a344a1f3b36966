//! Configuration, the end-to-end experiment flow, hyperparameter search and
//! the evaluation benchmark.

pub mod bench;
pub mod config;
mod experiment;
pub mod search;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

use crate::atomic::AtomicError;
use crate::dataset::DatasetError;
use crate::eval::EvalError;
use crate::models::ModelError;
use crate::protocol::ProtocolError;

pub use config::{load_config, Config};
pub use experiment::{
    prepare, resume_experiment, run_experiment, EarlyStopping, Prepared, ResumeOptions, RunOptions, RunOutcome, BEST,
    LATEST, REPORT_JSON, REPORT_TEXT, RUN_LOG,
};
pub use search::{
    grid_search, parse_range_file, parse_range_text, random_search, SearchOptions, SearchSpace, TrialResult,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("missing mandatory config key `{0}`")]
    MissingKey(String),
    #[error("config key `{key}`: `{value}` is not {expected}")]
    TypeMismatch {
        key: String,
        value: String,
        expected: String,
    },
    #[error("config key `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("config syntax error on line {line}: `{text}`")]
    ConfigSyntax { line: usize, text: String },
    #[error("range file line {line}: {reason}")]
    RangeSyntax { line: usize, reason: String },
    #[error("search space is empty")]
    EmptySpace,
    #[error("config hash {found} does not match checkpoint hash {expected}; pass --force to override")]
    HashMismatch { found: String, expected: String },
    #[error("checkpoint is missing trainer state: {0}")]
    BadCheckpoint(String),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Atomic(#[from] AtomicError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl RunError {
    /// Short stable category used in CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            RunError::UnknownKey(_)
            | RunError::MissingKey(_)
            | RunError::TypeMismatch { .. }
            | RunError::InvalidValue { .. }
            | RunError::ConfigSyntax { .. } => "config",
            RunError::RangeSyntax { .. } | RunError::EmptySpace => "search",
            RunError::HashMismatch { .. } | RunError::BadCheckpoint(_) => "checkpoint",
            RunError::Io { .. } => "io",
            RunError::Atomic(_) => "atomic",
            RunError::Dataset(_) => "dataset",
            RunError::Protocol(_) => "protocol",
            RunError::Model(_) => "model",
            RunError::Eval(_) => "eval",
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;
