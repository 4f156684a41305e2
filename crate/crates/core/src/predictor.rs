//! Predictors: the interface that stands in for trained segmentation
//! networks, plus three concrete kinds.
//!
//! * [`ConstantPredictor`] emits a fixed probability everywhere.
//! * [`FilePredictor`] serves probability maps produced elsewhere.
//! * [`ToyPredictor`] wraps a per-pixel logistic model trained by
//!   [`train_toy`] on handcrafted colour features.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{augment, AugmentationConfig};
use crate::io::{find_raster, read_prob_map};
use crate::mask::{BinaryMask, ImageBuffer, ProbMask, Raster};
use crate::metrics::{combined_loss, combined_loss_grad, confusion_counts, dice_data, LossConfig};
use crate::postprocess::binarize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    FileBacked,
    Toy,
    Constant,
}

/// Produces a probability map with the same shape as its input image.
pub trait Predictor: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> PredictorKind {
        PredictorKind::Toy
    }

    fn predict(&self, id: &str, image: &ImageBuffer) -> Result<ProbMask>;

    /// Whether predictions follow the pixels of the image passed in. Stored
    /// maps are keyed by id only, so test-time augmentation cannot apply.
    fn accepts_transformed_input(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct ConstantPredictor {
    name: String,
    value: f64,
}

impl ConstantPredictor {
    pub fn new(name: impl Into<String>, value: f64) -> Result<Self> {
        ProbMask::new(1, 1, vec![value])?;
        Ok(Self {
            name: name.into(),
            value,
        })
    }
}

impl Predictor for ConstantPredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> PredictorKind {
        PredictorKind::Constant
    }

    fn predict(&self, _id: &str, image: &ImageBuffer) -> Result<ProbMask> {
        ProbMask::constant(image.height(), image.width(), self.value)
    }
}

/// Serves pre-computed probability maps, one per image id.
#[derive(Debug, Clone)]
pub struct FilePredictor {
    name: String,
    maps: BTreeMap<String, ProbMask>,
}

impl FilePredictor {
    pub fn from_maps(name: impl Into<String>, maps: BTreeMap<String, ProbMask>) -> Self {
        Self {
            name: name.into(),
            maps,
        }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.maps.keys().map(String::as_str)
    }

    pub fn map(&self, id: &str) -> Option<&ProbMask> {
        self.maps.get(id)
    }
}

impl Predictor for FilePredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> PredictorKind {
        PredictorKind::FileBacked
    }

    fn predict(&self, id: &str, _image: &ImageBuffer) -> Result<ProbMask> {
        self.maps.get(id).cloned().ok_or_else(|| Error::UnknownImage {
            predictor: self.name.clone(),
            id: id.to_string(),
        })
    }

    fn accepts_transformed_input(&self) -> bool {
        false
    }
}

/// Reads a manifest: one image id per line; blank lines and `#` comments
/// are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_manifest(&text))
}

pub fn parse_manifest(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Loads `<dir>/<id>.<ext>` for every id. All missing ids are reported
/// together.
pub fn load_file_predictor(
    name: impl Into<String>,
    dir: &Path,
    ids: &[String],
) -> Result<FilePredictor> {
    let mut missing = Vec::new();
    let mut maps = BTreeMap::new();
    for id in ids {
        match find_raster(dir, id) {
            Some(path) => {
                maps.insert(id.clone(), read_prob_map(&path)?);
            }
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingMaps { ids: missing });
    }
    Ok(FilePredictor::from_maps(name, maps))
}

/// Step-decay learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSchedule {
    pub epochs: usize,
    pub initial_lr: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            epochs: 80,
            initial_lr: 0.001,
            decay_every: 25,
            decay_factor: 0.1,
            batch_size: 4,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs, decay_every and batch_size must be >= 1".into(),
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "initial_lr must be positive, got {}",
                self.initial_lr
            )));
        }
        Ok(())
    }

    /// `initial_lr · decay_factor^⌊epoch / decay_every⌋`.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                epochs: self.epochs,
            });
        }
        let decays = (epoch / self.decay_every) as i32;
        // for factors like 0.1, dividing by the exact integer 10^k keeps
        // 0.001 -> 0.0001 -> 0.00001 exact in decimal terms
        let inverse = 1.0 / self.decay_factor;
        if inverse.fract() == 0.0 && 1.0 / inverse == self.decay_factor {
            Ok(self.initial_lr / inverse.powi(decays))
        } else {
            Ok(self.initial_lr * self.decay_factor.powi(decays))
        }
    }
}

pub fn lr_at(schedule: &TrainingSchedule, epoch: usize) -> Result<f64> {
    schedule.lr_at(epoch)
}

/// Number of per-pixel features produced by [`extract_features`].
pub const FEATURE_COUNT: usize = 5;

/// Per-pixel features, row-major, [`FEATURE_COUNT`] values per pixel:
/// R, G, B scaled to `[0, 1]`, then the mean and standard deviation of the
/// grey level (channel mean, in `[0, 1]`) over the 3×3 neighbourhood with
/// edges clamped.
pub fn extract_features(image: &ImageBuffer) -> Vec<[f64; FEATURE_COUNT]> {
    let (h, w) = image.dims();
    let data = image.data();
    let grey: Vec<f64> = data
        .chunks_exact(3)
        .map(|px| (px[0] as f64 + px[1] as f64 + px[2] as f64) / (3.0 * 255.0))
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let rr = (r as isize + dr).clamp(0, h as isize - 1) as usize;
                    let cc = (c as isize + dc).clamp(0, w as isize - 1) as usize;
                    let g = grey[rr * w + cc];
                    sum += g;
                    sq += g * g;
                }
            }
            let mean = sum / 9.0;
            let var = (sq / 9.0 - mean * mean).max(0.0);
            let i = (r * w + c) * 3;
            out.push([
                data[i] as f64 / 255.0,
                data[i + 1] as f64 / 255.0,
                data[i + 2] as f64 / 255.0,
                mean,
                var.sqrt(),
            ]);
        }
    }
    out
}

/// Logistic model over [`extract_features`]; the last weight is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawToyModel")]
pub struct ToyModel {
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawToyModel {
    weights: Vec<f64>,
}

impl TryFrom<RawToyModel> for ToyModel {
    type Error = Error;

    fn try_from(raw: RawToyModel) -> Result<Self> {
        ToyModel::new(raw.weights)
    }
}

impl ToyModel {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() != FEATURE_COUNT + 1 {
            return Err(Error::InvalidConfig(format!(
                "toy model needs {} weights, got {}",
                FEATURE_COUNT + 1,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("toy model weights must be finite".into()));
        }
        Ok(Self { weights })
    }

    pub fn zeros() -> Self {
        Self {
            weights: vec![0.0; FEATURE_COUNT + 1],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn score(&self, x: &[f64; FEATURE_COUNT]) -> f64 {
        let mut z = self.weights[FEATURE_COUNT];
        for (w, v) in self.weights.iter().zip(x) {
            z += w * v;
        }
        z
    }

    fn predict_features(&self, h: usize, w: usize, features: &[[f64; FEATURE_COUNT]]) -> ProbMask {
        let data = features.iter().map(|x| sigmoid(self.score(x))).collect();
        ProbMask::from_valid(h, w, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid of the per-pixel linear score.
pub fn predict_toy(model: &ToyModel, image: &ImageBuffer) -> ProbMask {
    model.predict_features(image.height(), image.width(), &extract_features(image))
}

#[derive(Debug, Clone)]
pub struct ToyPredictor {
    name: String,
    model: ToyModel,
}

impl ToyPredictor {
    pub fn new(name: impl Into<String>, model: ToyModel) -> Self {
        Self {
            name: name.into(),
            model,
        }
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }
}

impl Predictor for ToyPredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, _id: &str, image: &ImageBuffer) -> Result<ProbMask> {
        Ok(predict_toy(&self.model, image))
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_train_loss: f64,
    /// Data-based Dice on the validation set, thresholded at 0.5.
    pub val_dice: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Checkpoint with the highest validation Dice (earliest on ties).
    pub model: ToyModel,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    /// Weights after the last epoch.
    pub final_model: ToyModel,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn total_steps(&self) -> usize {
        self.history.iter().map(|e| e.steps).sum()
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, weights: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..weights.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            weights[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Loss and weight gradient of the combined loss for one image.
fn image_loss_grad(
    model: &ToyModel,
    image: &ImageBuffer,
    gt: &BinaryMask,
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let features = extract_features(image);
    let prob = model.predict_features(image.height(), image.width(), &features);
    let loss = combined_loss(&prob, gt, loss_cfg)?;
    let d_prob = combined_loss_grad(&prob, gt, loss_cfg)?;
    let mut grad = vec![0.0; FEATURE_COUNT + 1];
    for ((x, &p), &dp) in features.iter().zip(prob.data()).zip(&d_prob) {
        let dz = dp * p * (1.0 - p);
        for k in 0..FEATURE_COUNT {
            grad[k] += dz * x[k];
        }
        grad[FEATURE_COUNT] += dz;
    }
    Ok((loss, grad))
}

/// Data-based Dice of `model` on `pairs`, thresholded at 0.5. A set with no
/// foreground in either predictions or ground truth scores 1.
pub fn validation_dice(model: &ToyModel, pairs: &[(ImageBuffer, BinaryMask)]) -> Result<f64> {
    let mut counts = Vec::with_capacity(pairs.len());
    for (image, gt) in pairs {
        let pred = binarize(&predict_toy(model, image), 0.5)?;
        counts.push(confusion_counts(&pred, gt)?);
    }
    Ok(dice_data(&counts).unwrap_or(1.0))
}

/// Fits a [`ToyModel`] with Adam on mini-batches of augmented images,
/// minimising the combined Dice + focal loss, and keeps the checkpoint with
/// the best validation Dice.
///
/// `seed` drives batch shuffling; augmentation draws come from a separate
/// stream seeded by `seed` and `aug_cfg.rng_seed`.
pub fn train_toy(
    train: &[(ImageBuffer, BinaryMask)],
    val: &[(ImageBuffer, BinaryMask)],
    schedule: &TrainingSchedule,
    loss_cfg: &LossConfig,
    aug_cfg: &AugmentationConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    schedule.validate()?;
    loss_cfg.validate()?;
    aug_cfg.validate()?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aug_rng = AugmentationConfig {
        rng_seed: aug_cfg.rng_seed ^ seed.rotate_left(32),
        ..aug_cfg.clone()
    }
    .worker_rng(1);

    let mut model = ToyModel::zeros();
    let mut adam = Adam::new(FEATURE_COUNT + 1);
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut history = Vec::with_capacity(schedule.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch)?;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for batch in order.chunks(schedule.batch_size) {
            let mut grad = vec![0.0; FEATURE_COUNT + 1];
            for &i in batch {
                let (image, gt) = &train[i];
                let (image, gt) = augment(image, gt, aug_cfg, &mut aug_rng)?;
                let (loss, g) = image_loss_grad(&model, &image, &gt, loss_cfg)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, loss });
                }
                loss_sum += loss;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b / batch.len() as f64;
                }
            }
            adam.step(&mut model.weights, &grad, lr);
            if model.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    loss: f64::NAN,
                });
            }
            steps += 1;
        }
        let val_dice = validation_dice(&model, val)?;
        if val_dice > best.2 {
            best = (model.clone(), epoch, val_dice);
        }
        history.push(EpochRecord {
            epoch,
            lr,
            mean_train_loss: loss_sum / train.len() as f64,
            val_dice,
            steps,
        });
    }

    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        best_val_dice: best.2,
        final_model: model,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_blob_dataset, BlobConfig};
    use rand::Rng;

    #[test]
    fn schedule_decay_steps() {
        let s = TrainingSchedule::default();
        assert_eq!(s.lr_at(0).unwrap(), 0.001);
        assert_eq!(s.lr_at(24).unwrap(), 0.001);
        assert_eq!(s.lr_at(25).unwrap(), 0.0001);
        assert_eq!(s.lr_at(50).unwrap(), 0.00001);
        assert!(s.lr_at(80).is_err());
    }

    #[test]
    fn schedule_monotone_piecewise_constant() {
        let s = TrainingSchedule::default();
        let lrs: Vec<f64> = (0..s.epochs).map(|e| s.lr_at(e).unwrap()).collect();
        for e in 1..s.epochs {
            assert!(lrs[e] <= lrs[e - 1]);
            if e % s.decay_every != 0 {
                assert_eq!(lrs[e], lrs[e - 1]);
            } else {
                assert!(lrs[e] < lrs[e - 1]);
            }
        }
        let odd = TrainingSchedule {
            decay_factor: 0.3,
            ..s
        };
        assert!((odd.lr_at(50).unwrap() - 0.001 * 0.09).abs() < 1e-18);
    }

    #[test]
    fn schedule_validation() {
        let bad = TrainingSchedule {
            decay_factor: 0.0,
            ..TrainingSchedule::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainingSchedule {
            epochs: 0,
            ..TrainingSchedule::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn features_constant_image() {
        let img = ImageBuffer::filled(4, 5, [10, 200, 90]);
        let f = extract_features(&img);
        assert_eq!(f.len(), 20);
        assert!(f.iter().all(|x| x[4] == 0.0));
        assert!((f[0][1] - 200.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn features_single_white_pixel() {
        let img = ImageBuffer::from_fn(5, 5, |r, c| if (r, c) == (2, 2) { [255; 3] } else { [0; 3] });
        let f = extract_features(&img);
        assert!((f[2 * 5 + 2][3] - 1.0 / 9.0).abs() < 1e-15);
        // std of one 1 among eight 0s: sqrt(1/9 - 1/81)
        assert!((f[2 * 5 + 2][4] - (8.0f64 / 81.0).sqrt()).abs() < 1e-12);
        assert_eq!(f[0][3], 0.0);
    }

    #[test]
    fn features_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = ImageBuffer::from_fn(7, 6, |_, _| [rng.random(), rng.random(), rng.random()]);
        for x in extract_features(&img) {
            assert!(x.iter().all(|v| v.is_finite()));
            assert!(x[..4].iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((0.0..=0.5).contains(&x[4]));
        }
    }

    #[test]
    fn zero_model_is_half() {
        let img = ImageBuffer::filled(3, 3, [1, 2, 3]);
        let p = predict_toy(&ToyModel::zeros(), &img);
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn toy_prediction_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = ImageBuffer::from_fn(6, 6, |_, _| [rng.random(), rng.random(), rng.random()]);
        let weights: Vec<f64> = (0..6).map(|_| rng.random_range(-20.0..20.0)).collect();
        let model = ToyModel::new(weights.clone()).unwrap();
        let p = predict_toy(&model, &img);
        let feats = extract_features(&img);
        for (i, x) in feats.iter().enumerate() {
            let z: f64 = weights[5] + (0..5).map(|k| weights[k] * x[k]).sum::<f64>();
            let expected = 1.0 / (1.0 + (-z).exp());
            assert!((p.data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_model_rejects_bad_weights() {
        assert!(ToyModel::new(vec![0.0; 5]).is_err());
        assert!(ToyModel::new(vec![f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(serde_json::from_str::<ToyModel>(r#"{"weights":[1,2]}"#).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let ids = parse_manifest("# test ids\na01\n\n  b02 \n#c\n");
        assert_eq!(ids, vec!["a01", "b02"]);
    }

    #[test]
    fn file_predictor_missing_ids_listed() {
        let dir = tempfile::tempdir().unwrap();
        crate::io::write_prob_map(&dir.path().join("a.png"), &ProbMask::constant(2, 2, 0.5).unwrap()).unwrap();
        let ids = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        match load_file_predictor("f", dir.path(), &ids) {
            Err(Error::MissingMaps { ids }) => assert_eq!(ids, vec!["b", "c"]),
            other => panic!("unexpected {other:?}"),
        }
        let p = load_file_predictor("f", dir.path(), &ids[..1]).unwrap();
        assert_eq!(p.len(), 1);
        let img = ImageBuffer::filled(2, 2, [0, 0, 0]);
        assert!((p.predict("a", &img).unwrap().data()[0] - 128.0 / 255.0).abs() < 1e-15);
        assert!(p.predict("zzz", &img).is_err());
        assert!(!p.accepts_transformed_input());
    }

    fn small_dataset(n: usize, seed: u64) -> Vec<(ImageBuffer, BinaryMask)> {
        let cfg = BlobConfig {
            size: 24,
            ..BlobConfig::default()
        };
        generate_blob_dataset(n, &cfg, seed)
            .into_iter()
            .map(|s| (s.image, s.mask))
            .collect()
    }

    #[test]
    fn one_epoch_step_count() {
        let data = small_dataset(10, 3);
        let schedule = TrainingSchedule {
            epochs: 1,
            ..TrainingSchedule::default()
        };
        let out = train_toy(&data[..9], &data[9..], &schedule, &LossConfig::default(), &AugmentationConfig::default(), 1).unwrap();
        assert_eq!(out.total_steps(), 3); // ceil(9 / 4)
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn training_is_deterministic_and_keeps_best() {
        let data = small_dataset(12, 4);
        let schedule = TrainingSchedule {
            epochs: 6,
            initial_lr: 0.05,
            decay_every: 3,
            ..TrainingSchedule::default()
        };
        let run = || train_toy(&data[..9], &data[9..], &schedule, &LossConfig::default(), &AugmentationConfig::default(), 11).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a, b);
        let bits = |m: &ToyModel| m.weights().iter().map(|w| w.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.model), bits(&b.model));
        let final_dice = validation_dice(&a.final_model, &data[9..]).unwrap();
        assert!(a.best_val_dice >= final_dice);
        assert_eq!(validation_dice(&a.model, &data[9..]).unwrap(), a.best_val_dice);
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let data = small_dataset(4, 5);
        let cfg = LossConfig::default();
        let mut model = ToyModel::zeros();
        let mut adam = Adam::new(FEATURE_COUNT + 1);
        let batch_loss = |m: &ToyModel| -> f64 {
            data.iter()
                .map(|(img, gt)| image_loss_grad(m, img, gt, &cfg).unwrap().0)
                .sum()
        };
        let start = batch_loss(&model);
        for _ in 0..10 {
            let mut grad = vec![0.0; FEATURE_COUNT + 1];
            for (img, gt) in &data {
                let (_, g) = image_loss_grad(&model, img, gt, &cfg).unwrap();
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b / data.len() as f64;
                }
            }
            adam.step(&mut model.weights, &grad, 1e-3);
        }
        assert!(batch_loss(&model) < start);
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let data = small_dataset(1, 6);
        let (img, gt) = &data[0];
        let cfg = LossConfig::default();
        let model = ToyModel::new(vec![0.3, -0.2, 0.1, 0.4, -0.5, -0.1]).unwrap();
        let (_, grad) = image_loss_grad(&model, img, gt, &cfg).unwrap();
        let h = 1e-6;
        for (k, &analytic) in grad.iter().enumerate() {
            let mut up = model.clone();
            up.weights[k] += h;
            let mut down = model.clone();
            down.weights[k] -= h;
            let fd = (image_loss_grad(&up, img, gt, &cfg).unwrap().0 - image_loss_grad(&down, img, gt, &cfg).unwrap().0) / (2.0 * h);
            assert!((fd - analytic).abs() <= 1e-6 * fd.abs().max(1e-3), "k={k} fd={fd} an={analytic}");
        }
    }

    #[test]
    fn training_requires_data() {
        let data = small_dataset(2, 1);
        let s = TrainingSchedule::default();
        let l = LossConfig::default();
        let a = AugmentationConfig::default();
        assert!(train_toy(&[], &data, &s, &l, &a, 0).is_err());
        assert!(train_toy(&data, &[], &s, &l, &a, 0).is_err());
    }
}
