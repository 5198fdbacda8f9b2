// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input not found: {0}")]
    InputNotFound(PathBuf),

    #[error("duplicate post_id {id:?} on line {line}")]
    DuplicatePostId { id: String, line: usize },

    #[error("insufficient generable fakes: {0}")]
    Shortfall(String),

    #[error("checkpoint hash mismatch: stored {stored}, computed {computed}")]
    CheckpointHash { stored: String, computed: String },

    #[error("empty evaluation subset")]
    EmptySubset,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("corpus format: {0}")]
    Format(String),

    #[error("corpus too small: need at least {needed} records, have {have}")]
    CorpusTooSmall { needed: usize, have: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("span {start}..{end} out of range for {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("event tagger unavailable: {0}")]
    TaggerUnavailable(String),

    #[error("empty text")]
    EmptyText,

    #[error("unresolvable frame reference: {0}")]
    FrameRef(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("every position is masked")]
    AllMasked,

    #[error("every fuse input is absent")]
    AllModalitiesAbsent,

    #[error("explanation requested for a consistent verdict")]
    ConsistentVerdict,

    #[error("no contradiction-labelled candidate: {0}")]
    NoFakeClaim(String),

    #[error("record skipped: {0}")]
    Skipped(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Stable process exit code; shared by the CLI and the C ABI.
    pub fn code(&self) -> i32 {
        match self {
            Error::InputNotFound(_) => 2,
            Error::DuplicatePostId { .. } => 3,
            Error::Shortfall(_) => 4,
            Error::CheckpointHash { .. } => 5,
            Error::EmptySubset => 6,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::InputNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
