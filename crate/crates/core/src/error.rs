use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: name `{name}` uses the reserved inverse suffix")]
    ReservedName { line: usize, name: String },
    #[error("triplet file contains no facts")]
    EmptyGraph,
    #[error("graph already holds inverse triplets")]
    AlreadyAugmented,
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl KgError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        KgError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("softmax over a list with no valid entries")]
    EmptySoftmax,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("{0}")]
    Invalid(String),
}

/// Errors raised above the graph layer: datasets, rules, models, evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("rules: {0}")]
    Rules(String),
    #[error("config: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("evaluation: {0}")]
    Eval(String),
    #[error("{path}: checksum mismatch (expected {expected}, found {found})")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
