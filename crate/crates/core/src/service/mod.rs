//! Storage, ingestion and the HTTP API.

pub mod api;
pub mod config;
pub mod http;
pub mod pipeline;
pub mod store;

use std::path::Path;

use thiserror::Error;

use crate::classify::ClassifyError;
use crate::corpus::CorpusError;
use crate::normalize::NormalizeError;
use crate::pico::TagError;

pub use api::{Api, ApiError, Snapshot};
pub use config::Config;
pub use pipeline::{run_pipeline, IngestOptions, IngestReport, Pipeline};
pub use store::{ConceptIndex, ExtractionRecord, JournalEntry, Store};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    StoreRecord {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("index inconsistent with extractions: {}", .0.join("; "))]
    Inconsistent(Vec<String>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Tag(#[from] TagError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl ServiceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
