//! Crate-wide error type and result alias.

use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::Modality;
use crate::pipeline::Stage;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- volume ingestion ---
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("expected a 3-D volume, got {0} dimensions")]
    DimensionalityError(usize),
    #[error("slice index {index} out of range for {nz} slices")]
    IndexOutOfRange { index: usize, nz: usize },
    #[error("expected modality {expected}, got {actual}")]
    WrongModality { expected: Modality, actual: Modality },

    // --- rasters and preprocessing ---
    #[error("{0}")]
    DomainError(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("{region} region is empty")]
    EmptyRegion { region: &'static str },
    #[error("background has zero variance; SNR is undefined")]
    ZeroBackgroundVariance,
    #[error("pixel values must lie in [0, 1]; input is not normalized")]
    NonNormalizedInput,
    #[error("dimension mismatch: {left_width}x{left_height} vs {right_width}x{right_height}")]
    DimMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },
    #[error("{0}")]
    GeometryError(String),

    // --- pipeline and backends ---
    #[error("no detections to select from")]
    NoDetection,
    #[error("prompt ({row}, {col}) out of bounds for {width}x{height} image")]
    PromptOutOfBounds {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
    },
    #[error("{stage} backend '{backend}' failed: {message}")]
    BackendFailure {
        stage: Stage,
        backend: String,
        message: String,
    },
    #[error("failed to load model: {0}")]
    ModelLoadError(String),
    #[error("backend manifest: {0}")]
    ManifestError(String),
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),

    // --- evaluation ---
    #[error("case manifest: {0}")]
    CaseManifest(String),
    #[error("case {index}: {source}")]
    CaseIndexed {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("case '{case_id}': {source}")]
    CaseFailure {
        case_id: String,
        #[source]
        source: Box<Error>,
    },

    // --- wrapped external errors ---
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Attach a case id, used by the batch runner when collecting failures.
    pub fn for_case(self, case_id: &str) -> Error {
        Error::CaseFailure {
            case_id: case_id.to_string(),
            source: Box::new(self),
        }
    }

    /// True for failures reported by a detector/segmenter backend (model
    /// loading, manifest bindings, inference), as opposed to bad input data.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::BackendFailure { .. }
            | Error::ModelLoadError(_)
            | Error::ManifestError(_)
            | Error::ShapeMismatch(_) => true,
            Error::CaseIndexed { source, .. } | Error::CaseFailure { source, .. } => {
                source.is_backend()
            }
            _ => false,
        }
    }
}
