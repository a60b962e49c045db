use std::io;
use std::path::{Path, PathBuf};

use crate::provider::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no extracted text for document `{doc_id}` (expected {})", path.display())]
    MissingText { doc_id: String, path: PathBuf },

    #[error("cannot sample {requested} documents from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("manifest is empty")]
    EmptyManifest,

    #[error(
        "document `{doc_id}` alone needs ~{required} tokens but the window leaves {available}; \
         rerun with --skip-oversize to exclude it"
    )]
    OversizeDocument {
        doc_id: String,
        required: u64,
        available: u64,
    },

    #[error(
        "checkpoint in {} was written for a different manifest or batch plan \
         (expected {expected}, found {found}); remove it or rerun without --resume",
        dir.display()
    )]
    CheckpointMismatch {
        dir: PathBuf,
        expected: String,
        found: String,
    },

    #[error("no batch_*_output.txt files in {}", .0.display())]
    NoBatchOutputs(PathBuf),

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn malformed(
        path: impl AsRef<Path>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Malformed {
            path: path.as_ref().to_path_buf(),
            line,
            message: message.into(),
        }
    }
}
