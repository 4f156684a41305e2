//! Complete seeded run on procedurally generated data: split, per-fold
//! training, ensemble inference with TTA, post-processing and evaluation of
//! a held-out set.

use std::collections::BTreeMap;

use serde_json::json;

use crate::ensemble::split_folds;
use crate::error::{Error, Result};
use crate::pipeline::dataset::DatasetIndex;
use crate::pipeline::inference::{run_inference, InferenceOptions, InferenceOutput};
use crate::pipeline::report::{evaluate, EvaluationReport};
use crate::pipeline::training::{toy_family, train_cross_validated, CvTrainingConfig};
use crate::predictor::TrainOutcome;
use crate::synthetic::{generate_blob_dataset, BlobConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExperiment {
    pub n_images: usize,
    /// Trailing images kept out of cross-validation and scored at the end.
    pub held_out: usize,
    pub blobs: BlobConfig,
    pub data_seed: u64,
    pub folds: usize,
    pub split_seed: u64,
    pub training: CvTrainingConfig,
    pub inference: InferenceOptions,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub folds: Vec<TrainOutcome>,
    pub inference: InferenceOutput,
    pub report: EvaluationReport,
}

pub fn run_synthetic_experiment(exp: &SyntheticExperiment) -> Result<ExperimentOutcome> {
    if exp.held_out == 0 || exp.held_out >= exp.n_images {
        return Err(Error::InvalidConfig(format!(
            "held_out must be in 1..{}, got {}",
            exp.n_images, exp.held_out
        )));
    }
    let samples = generate_blob_dataset(exp.n_images, &exp.blobs, exp.data_seed);
    let (cv_samples, test_samples) = samples.split_at(exp.n_images - exp.held_out);
    let cv = DatasetIndex::from_samples(None, cv_samples)?;
    let test = DatasetIndex::from_samples(None, test_samples)?;

    let assignment = split_folds(cv.len(), exp.folds, exp.split_seed)?;
    let folds = train_cross_validated(&cv.labelled_pairs(), &assignment, &exp.training)?;
    let family = toy_family("toy", &folds)?;
    let inference = run_inference(&test, &[family], &exp.inference)?;
    if let Some(f) = inference.failures.first() {
        return Err(Error::InvalidConfig(format!("inference failed for `{}`: {}", f.id, f.error)));
    }

    let variants: Vec<String> = exp
        .inference
        .tta
        .iter()
        .flatten()
        .map(|v| v.to_string())
        .collect();
    let pp = &exp.inference.postprocess;
    let config = BTreeMap::from([
        ("n_images".to_string(), json!(exp.n_images)),
        ("held_out".to_string(), json!(exp.held_out)),
        ("data_seed".to_string(), json!(exp.data_seed)),
        ("folds".to_string(), json!(exp.folds)),
        ("split_seed".to_string(), json!(exp.split_seed)),
        ("train_seed".to_string(), json!(exp.training.seed)),
        ("augmentation_seed".to_string(), json!(exp.training.augmentation.rng_seed)),
        ("epochs".to_string(), json!(exp.training.schedule.epochs)),
        ("initial_lr".to_string(), json!(exp.training.schedule.initial_lr)),
        ("threshold".to_string(), json!(pp.threshold)),
        ("min_object_area".to_string(), json!(pp.min_object_area)),
        ("connectivity".to_string(), json!(u8::from(pp.connectivity))),
        ("tta_variants".to_string(), json!(variants)),
    ]);
    let report = evaluate(&inference.masks(), &test, false, config)?;
    Ok(ExperimentOutcome {
        folds,
        inference,
        report,
    })
}
