use std::sync::Arc;

use rayon::prelude::*;

use crate::ensemble::{EnsembleSpec, FoldAssignment};
use crate::error::{Error, Result};
use crate::geometry::AugmentationConfig;
use crate::mask::{BinaryMask, ImageBuffer};
use crate::metrics::LossConfig;
use crate::predictor::{train_toy, Predictor, ToyPredictor, TrainOutcome, TrainingSchedule};

/// Everything needed to train one toy sub-model per fold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CvTrainingConfig {
    pub schedule: TrainingSchedule,
    pub loss: LossConfig,
    pub augmentation: AugmentationConfig,
    pub seed: u64,
}

/// Trains one sub-model per fold, holding that fold out for checkpoint
/// selection. Fold `f` uses seed `seed + f`; folds train concurrently and
/// results come back in fold order.
pub fn train_cross_validated(
    pairs: &[(ImageBuffer, BinaryMask)],
    folds: &FoldAssignment,
    cfg: &CvTrainingConfig,
) -> Result<Vec<TrainOutcome>> {
    if folds.n_items() != pairs.len() {
        return Err(Error::InvalidConfig(format!(
            "fold assignment covers {} items but {} pairs were given",
            folds.n_items(),
            pairs.len()
        )));
    }
    (0..folds.k())
        .into_par_iter()
        .map(|fold| {
            let pick = |idx: Vec<usize>| -> Vec<_> { idx.into_iter().map(|i| pairs[i].clone()).collect() };
            let train = pick(folds.training_items(fold));
            let val = pick(folds.validation_items(fold));
            train_toy(
                &train,
                &val,
                &cfg.schedule,
                &cfg.loss,
                &cfg.augmentation,
                cfg.seed.wrapping_add(fold as u64),
            )
        })
        .collect()
}

/// Wraps trained fold models as one equally weighted model family.
pub fn toy_family(name: &str, outcomes: &[TrainOutcome]) -> Result<EnsembleSpec> {
    let predictors = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            Arc::new(ToyPredictor::new(format!("{name}_fold{i}"), o.model.clone())) as Arc<dyn Predictor>
        })
        .collect();
    EnsembleSpec::equal(name, predictors)
}
