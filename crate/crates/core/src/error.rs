use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },
    #[error("feature dimension is zero")]
    ZeroDim,
    #[error("truncated payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },
    #[error("image {image} has an empty object set")]
    EmptyObjectSet { image: usize },
    #[error("episode {episode}: {field} index {index} out of range (count {count})")]
    IndexOutOfRange { episode: String, field: &'static str, index: usize, count: usize },
    #[error("episode {episode} has {turns} turn(s); at least 2 are required")]
    EpisodeTooShort { episode: String, turns: usize },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("invalid synthetic spec: {0}")]
    SpecInvalid(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("context is empty after truncation")]
    ContextEmpty,
    #[error("visual dimension mismatch: model expects {expected}, store has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("empty target sequence")]
    EmptyTarget,
    #[error("empty utterance")]
    EmptyUtterance,
    #[error("object set is empty")]
    EmptyObjectSet,
    #[error("context index {j} invalid for an episode of {turns} turns")]
    BadContextIndex { j: usize, turns: usize },
    #[error("token id {0} outside the vocabulary")]
    TokenOutOfRange(u32),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset has no training examples")]
    EmptyDataset,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("no negatives available: need {needed}, batch offers {available}")]
    NoNegativesAvailable { needed: usize, available: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("N-best list is empty")]
    EmptyNBest,
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("invalid rerank weights: {0}")]
    InvalidWeights(String),
    #[error("invalid beam configuration: {0}")]
    InvalidBeam(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("candidate/reference count mismatch: {candidates} vs {references}")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("no candidates to score")]
    Empty,
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("train and test splits share episode {0}")]
    SplitOverlap(String),
    #[error("split {split} cannot be balanced: {reason}")]
    Unbalanced { split: &'static str, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Train(#[from] TrainError),
}
