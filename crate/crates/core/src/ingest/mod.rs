//! Dataset I/O: the canonical JSON project format, PSPLIB `.sm` parsing,
//! tabular CSV ingestion with surrogate graph construction, and train-split
//! preprocessing (imputation, winsorization, z-scoring, one-hot encoding).

mod canonical;
mod preprocess;
mod psplib;
mod tabular;

pub use canonical::{read_canonical, write_canonical, CANONICAL_SCHEMA};
pub use preprocess::{apply_preprocess, fit_preprocess, PreprocessStats};
pub use psplib::parse_psplib;
pub use tabular::{build_surrogate_graph, SurrogateStrategy};

use crate::graph::GraphError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema violation at {path}: {reason}")]
    SchemaViolation { path: String, reason: String },
    #[error("unsupported schema version {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: String },
    #[error("parse error at line {line}: expected {expected}")]
    ParseError { line: usize, expected: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
