use std::io;

use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("empty corpus: no tokens to build a vocabulary from")]
    EmptyCorpus,

    #[error("concept source has no valid rows ({rejected} rejected)")]
    NoValidRows { rejected: usize },

    #[error("vector file line {line}: {message}")]
    VectorFormat { line: usize, message: String },

    #[error("vector for word '{word}' has dimension {found}, expected {expected}")]
    VectorDimension {
        word: String,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("degenerate task '{task}': training data contains fewer than two labels")]
    DegenerateTask { task: String },

    #[error("invalid meta task: {0}")]
    InvalidTask(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("documents missing from predictions or gold: {0:?}")]
    DocumentMismatch(Vec<String>),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
