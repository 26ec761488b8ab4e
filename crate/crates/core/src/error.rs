use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence too short: need at least {needed} entries, got {got}")]
    SequenceTooShort { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("frame {frame} outside keyframe range [{first}, {last}]")]
    OutOfRange { frame: usize, first: usize, last: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("simulation diverged at frame {frame}")]
    SimDiverged { frame: usize },

    #[error("contact records span more than one frame ({first} and {other})")]
    MixedFrames { first: usize, other: usize },

    #[error("joint count mismatch: simulated {sim}, reference {reference}")]
    JointCountMismatch { sim: usize, reference: usize },

    #[error("unknown fingertip id {0}")]
    UnknownFingertip(usize),

    #[error("need at least 4 keyframes, got {0}")]
    TooFewKeyframes(usize),

    #[error("scene mismatch: {0}")]
    SceneMismatch(String),

    #[error("joint set mismatch: {0}")]
    JointSetMismatch(String),

    #[error("cannot aggregate an empty report list")]
    EmptyList,

    #[error("scripted demonstration failed after {attempts} attempts: {reason}")]
    TaskScriptFailed { attempts: usize, reason: String },

    #[error("corruption span {from}..={to} outside trajectory of {len} frames")]
    SpanOutOfRange { from: usize, to: usize, len: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("unsupported format_version {found} (supported: {supported})")]
    VersionUnsupported { found: u64, supported: u64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
