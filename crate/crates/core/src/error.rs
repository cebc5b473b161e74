use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("schema violation in {location}: {message}")]
    SchemaViolation { location: String, message: String },

    #[error("events are not sorted by timestamp (line {line})")]
    UnsortedEvents { line: usize },

    #[error("patch region {x},{y} {width}x{height} exceeds {frame_width}x{frame_height} frame")]
    OutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
        frame_width: u32,
        frame_height: u32,
    },

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),

    #[error("frame index {index} out of range (frame_count = {count})")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("corrupt patch for frame {frame}: {message}")]
    CorruptPatch { frame: usize, message: String },

    #[error("OCR backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("OCR backend failure: {0}")]
    BackendFailure(String),

    #[error("duplicate address {0:#x}")]
    DuplicateAddress(u64),

    #[error("cross-reference endpoint {0:#x} does not resolve")]
    DanglingXref(u64),

    #[error("rename target {0:?} does not resolve")]
    AmbiguousTarget(String),

    #[error("subject {subject} has {available} eligible frames, {requested} requested")]
    InsufficientFrames {
        subject: String,
        available: usize,
        requested: usize,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("image encoding: {0}")]
    Png(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn schema(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::SchemaViolation {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Attributes the error to a pipeline stage.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Returns the pipeline stage this error is attributed to, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
