//! Inference-side pipeline for binary wound segmentation: cross-validation
//! ensembles, test-time augmentation, probability fusion, morphological
//! post-processing and segmentation metrics.

pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod predictor;
pub mod synthetic;

pub use error::{Error, Result};
pub use mask::{BinaryMask, ImageBuffer, ProbMask, Raster};
