use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can surface. Variants are grouped by the exit
/// code the command-line runner maps them to.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("empty manifest: {0}")]
    EmptyManifest(PathBuf),

    #[error("unknown label {label:?} on line {line} of the manifest")]
    UnknownLabel { label: String, line: usize },

    #[error("duplicate sample_id {0:?} in manifest")]
    DuplicateSampleId(String),

    #[error("class {class} has {count} samples, fewer than k = {k}")]
    ClassTooSmall { class: String, count: usize, k: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("could not decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("numerical failure in fold {fold} at epoch {epoch}: {detail}")]
    Numerical { fold: usize, epoch: usize, detail: String },

    #[error("corrupt checkpoint {path}: {detail}")]
    CorruptCheckpoint { path: PathBuf, detail: String },

    #[error("nothing to resume in {0}")]
    NothingToResume(PathBuf),

    #[error("incomplete runs: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    IncompleteRuns(Vec<PathBuf>),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn in_fold(self, fold: usize) -> Self {
        match self {
            e @ (Error::InFold { .. } | Error::Numerical { .. }) => e,
            e => Error::InFold {
                fold,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code: 1 config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigMismatch(_) => 1,
            Error::Numerical { .. } => 3,
            Error::InFold { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
