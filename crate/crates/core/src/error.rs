use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::TtaVariant;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected_h}x{expected_w}, got {actual_h}x{actual_w}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        actual_h: usize,
        actual_w: usize,
    },

    #[error("buffer length {actual} does not match {height}x{width} (expected {expected})")]
    LengthMismatch {
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },

    #[error("probability {value} at index {index} is outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },

    #[error("cannot pad {height}x{width} raster to smaller target {target_h}x{target_w}")]
    PadTargetTooSmall {
        height: usize,
        width: usize,
        target_h: usize,
        target_w: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("predictor output for TTA variant {variant} has shape {actual_h}x{actual_w}, expected {expected_h}x{expected_w}")]
    PredictorShape {
        variant: TtaVariant,
        expected_h: usize,
        expected_w: usize,
        actual_h: usize,
        actual_w: usize,
    },

    #[error("sub-model {index} failed: {source}")]
    SubModel {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("predictor `{predictor}` has no probability map for image `{id}`")]
    UnknownImage { predictor: String, id: String },

    #[error("missing probability maps for ids: {}", .ids.join(", "))]
    MissingMaps { ids: Vec<String> },

    #[error("malformed probability map {path}: {reason}")]
    MalformedMap { path: PathBuf, reason: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("epoch {epoch} is outside schedule of {epochs} epochs")]
    EpochOutOfRange { epoch: usize, epochs: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image `{id}`: mask is {mask_h}x{mask_w} but image is {image_h}x{image_w}")]
    MaskImageMismatch {
        id: String,
        image_h: usize,
        image_w: usize,
        mask_h: usize,
        mask_w: usize,
    },

    #[error("duplicate image id `{0}`")]
    DuplicateId(String),

    #[error("no ground truth for image ids: {}", .ids.join(", "))]
    MissingGroundTruth { ids: Vec<String> },

    #[error("no prediction for image ids: {}", .ids.join(", "))]
    MissingPredictions { ids: Vec<String> },

    #[error("inconsistent report: {0}")]
    InconsistentReport(String),

    #[error("fold table: {0}")]
    FoldTable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by input data rather than configuration or
    /// runtime failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Image { .. }
                | Error::Dataset(_)
                | Error::MaskImageMismatch { .. }
                | Error::DuplicateId(_)
                | Error::MissingGroundTruth { .. }
                | Error::MissingPredictions { .. }
                | Error::MissingMaps { .. }
                | Error::MalformedMap { .. }
                | Error::ProbabilityOutOfRange { .. }
                | Error::InconsistentReport(_)
                | Error::FoldTable(_)
                | Error::Json(_)
        )
    }
}
