//! Dataset ingestion, cross-validated training, ensemble inference and
//! evaluation reporting.

pub mod dataset;
pub mod experiment;
pub mod inference;
pub mod report;
pub mod training;

pub use dataset::{ingest, read_prediction_masks, write_dataset, DatasetIndex, DatasetRecord};
pub use inference::{predict_fused, run_inference, InferenceFailure, InferenceOptions, InferenceOutput, Prediction};
pub use report::{
    classify, evaluate, render_buckets, render_metrics_table, Bucket, EvaluationReport, FailureBuckets,
    ImageRecord, ZeroCase, ZeroCause,
};
pub use experiment::{run_synthetic_experiment, ExperimentOutcome, SyntheticExperiment};
pub use training::{toy_family, train_cross_validated, CvTrainingConfig};
