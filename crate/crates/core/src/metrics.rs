//! Confusion counting, the five evaluation scores and the training losses.
//!
//! Data-based scores pool counts over all images before forming the ratio;
//! the image-based Dice averages per-image ratios. A ratio whose denominator
//! is zero is reported as `None` rather than NaN.

use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{ensure_same_dims, BinaryMask, ProbMask, Raster};

/// Pixel tallies for one prediction/ground-truth pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn gt_positive(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn pred_positive(&self) -> u64 {
        self.tp + self.fp
    }

    /// Per-image Dice. An image with neither predicted nor true foreground
    /// scores 1.0; when exactly one side is empty it scores 0.0.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl<'a> Sum<&'a ConfusionCounts> for ConfusionCounts {
    fn sum<I: Iterator<Item = &'a ConfusionCounts>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, &b| a + b)
    }
}

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    ensure_same_dims(gt.dims(), pred.dims())?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, denom: u64) -> Option<f64> {
    (denom != 0).then(|| num as f64 / denom as f64)
}

/// ΣTP / (ΣTP + ΣFP)
pub fn precision(counts: &[ConfusionCounts]) -> Option<f64> {
    let s: ConfusionCounts = counts.iter().sum();
    ratio(s.tp, s.tp + s.fp)
}

/// ΣTP / (ΣTP + ΣFN)
pub fn recall(counts: &[ConfusionCounts]) -> Option<f64> {
    let s: ConfusionCounts = counts.iter().sum();
    ratio(s.tp, s.tp + s.fn_)
}

/// Σ2TP / (Σ2TP + ΣFP + ΣFN)
pub fn dice_data(counts: &[ConfusionCounts]) -> Option<f64> {
    let s: ConfusionCounts = counts.iter().sum();
    ratio(2 * s.tp, 2 * s.tp + s.fp + s.fn_)
}

/// ΣTP / (ΣTP + ΣFP + ΣFN)
pub fn iou_data(counts: &[ConfusionCounts]) -> Option<f64> {
    let s: ConfusionCounts = counts.iter().sum();
    ratio(s.tp, s.tp + s.fp + s.fn_)
}

/// Mean of per-image Dice (see [`ConfusionCounts::dice`]); `None` for an
/// empty batch.
pub fn dice_image(counts: &[ConfusionCounts]) -> Option<f64> {
    if counts.is_empty() {
        return None;
    }
    let sum: f64 = counts.iter().map(ConfusionCounts::dice).sum();
    Some(sum / counts.len() as f64)
}

/// The five scores over a batch of `n_images` images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub dice_data: Option<f64>,
    pub iou_data: Option<f64>,
    pub dice_image: Option<f64>,
    pub n_images: usize,
}

impl MetricSet {
    pub fn from_counts(counts: &[ConfusionCounts]) -> Self {
        Self {
            precision: precision(counts),
            recall: recall(counts),
            dice_data: dice_data(counts),
            iou_data: iou_data(counts),
            dice_image: dice_image(counts),
            n_images: counts.len(),
        }
    }
}

/// Weights and parameters of the Dice + focal training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub dice_weight: f64,
    pub focal_weight: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub dice_smooth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            dice_weight: 0.5,
            focal_weight: 0.5,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            dice_smooth: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dice_weight >= 0.0
            && self.focal_weight >= 0.0
            && self.focal_gamma >= 0.0
            && (0.0..=1.0).contains(&self.focal_alpha)
            && self.dice_smooth > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid loss configuration {self:?}")));
        }
        Ok(())
    }
}

/// Clamp applied to probabilities inside the focal loss.
pub const FOCAL_EPS: f64 = 1e-7;

fn targets(prob: &ProbMask, gt: &BinaryMask) -> Result<()> {
    ensure_same_dims(gt.dims(), prob.dims())
}

/// `1 - (2·Σpg + s) / (Σp + Σg + s)`.
pub fn dice_loss(prob: &ProbMask, gt: &BinaryMask, smooth: f64) -> Result<f64> {
    targets(prob, gt)?;
    let (inter, psum, gsum) = dice_sums(prob.data(), gt.data());
    Ok(1.0 - (2.0 * inter + smooth) / (psum + gsum + smooth))
}

fn dice_sums(p: &[f64], g: &[bool]) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut gsum = 0.0;
    for (&pi, &gi) in p.iter().zip(g) {
        psum += pi;
        if gi {
            inter += pi;
            gsum += 1.0;
        }
    }
    (inter, psum, gsum)
}

/// Gradient of [`dice_loss`] with respect to each probability.
pub fn dice_loss_grad(prob: &ProbMask, gt: &BinaryMask, smooth: f64) -> Result<Vec<f64>> {
    targets(prob, gt)?;
    Ok(dice_grad_raw(prob.data(), gt.data(), smooth))
}

fn dice_grad_raw(p: &[f64], g: &[bool], smooth: f64) -> Vec<f64> {
    let (inter, psum, gsum) = dice_sums(p, g);
    let num = 2.0 * inter + smooth;
    let den = psum + gsum + smooth;
    g.iter()
        .map(|&gi| {
            let gi = if gi { 1.0 } else { 0.0 };
            -(2.0 * gi * den - num) / (den * den)
        })
        .collect()
}

/// Mean over pixels of `-α_t (1 - p_t)^γ ln p_t`, with `p` clamped to
/// `[ε, 1 - ε]`. For foreground pixels `p_t = p` and `α_t = α`; for
/// background `p_t = 1 - p` and `α_t = 1 - α`.
pub fn focal_loss(prob: &ProbMask, gt: &BinaryMask, gamma: f64, alpha: f64) -> Result<f64> {
    targets(prob, gt)?;
    let n = prob.pixel_count() as f64;
    let total: f64 = prob
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
            let (pt, at) = if g { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
            -at * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(total / n)
}

/// Gradient of [`focal_loss`] with respect to each probability. Pixels held
/// at the clamp boundary get zero gradient.
pub fn focal_loss_grad(prob: &ProbMask, gt: &BinaryMask, gamma: f64, alpha: f64) -> Result<Vec<f64>> {
    targets(prob, gt)?;
    Ok(focal_grad_raw(prob.data(), gt.data(), gamma, alpha))
}

fn focal_grad_raw(p: &[f64], g: &[bool], gamma: f64, alpha: f64) -> Vec<f64> {
    let n = p.len() as f64;
    p.iter()
        .zip(g)
        .map(|(&p, &g)| {
            if !(FOCAL_EPS..=1.0 - FOCAL_EPS).contains(&p) {
                return 0.0;
            }
            let (pt, at, sign) = if g { (p, alpha, 1.0) } else { (1.0 - p, 1.0 - alpha, -1.0) };
            let q = 1.0 - pt;
            // d/dpt of -at q^γ ln pt
            let pull = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) * pt.ln() };
            let d_pt = at * (pull - q.powf(gamma) / pt);
            sign * d_pt / n
        })
        .collect()
}

/// `dice_weight·dice_loss + focal_weight·focal_loss`.
pub fn combined_loss(prob: &ProbMask, gt: &BinaryMask, cfg: &LossConfig) -> Result<f64> {
    let d = dice_loss(prob, gt, cfg.dice_smooth)?;
    let f = focal_loss(prob, gt, cfg.focal_gamma, cfg.focal_alpha)?;
    Ok(cfg.dice_weight * d + cfg.focal_weight * f)
}

pub fn combined_loss_grad(prob: &ProbMask, gt: &BinaryMask, cfg: &LossConfig) -> Result<Vec<f64>> {
    targets(prob, gt)?;
    let d = dice_grad_raw(prob.data(), gt.data(), cfg.dice_smooth);
    let f = focal_grad_raw(prob.data(), gt.data(), cfg.focal_gamma, cfg.focal_alpha);
    Ok(d
        .into_iter()
        .zip(f)
        .map(|(a, b)| cfg.dice_weight * a + cfg.focal_weight * b)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cc(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    fn close(a: Option<f64>, b: f64) -> bool {
        a.is_some_and(|a| (a - b).abs() < 1e-12)
    }

    #[test]
    fn counts_identical_masks() {
        let gt = BinaryMask::new(3, 3, vec![true, true, true, false, false, false, false, false, false]).unwrap();
        assert_eq!(confusion_counts(&gt, &gt).unwrap(), cc(3, 0, 0, 6));
    }

    #[test]
    fn counts_empty_prediction() {
        let gt = BinaryMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let pred = BinaryMask::empty(2, 2);
        assert_eq!(confusion_counts(&pred, &gt).unwrap(), cc(0, 0, 2, 2));
        assert!(confusion_counts(&pred, &BinaryMask::empty(2, 3)).is_err());
    }

    #[test]
    fn counts_match_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pred = BinaryMask::from_fn(16, 16, |_, _| rng.random());
        let gt = BinaryMask::from_fn(16, 16, |_, _| rng.random());
        let c = confusion_counts(&pred, &gt).unwrap();
        let mut tp = 0;
        let mut tn = 0;
        for r in 0..16 {
            for col in 0..16 {
                if pred.get(r, col) && gt.get(r, col) {
                    tp += 1;
                }
                if !pred.get(r, col) && !gt.get(r, col) {
                    tn += 1;
                }
            }
        }
        assert_eq!((c.tp, c.tn), (tp, tn));
        assert_eq!(c.total(), 256);
    }

    #[test]
    fn precision_cases() {
        assert!(close(precision(&[cc(4, 1, 0, 0)]), 0.8));
        assert!(close(precision(&[cc(5, 0, 0, 3)]), 1.0));
        assert!(close(precision(&[cc(1, 0, 0, 0), cc(0, 1, 0, 0)]), 0.5));
        assert_eq!(precision(&[cc(0, 0, 3, 1)]), None);
    }

    #[test]
    fn recall_cases() {
        assert!(close(recall(&[cc(3, 0, 1, 0)]), 0.75));
        assert_eq!(recall(&[cc(0, 2, 0, 7)]), None);
        assert!(close(recall(&[cc(3, 5, 0, 1)]), 1.0));
    }

    #[test]
    fn dice_iou_image_cases() {
        let a = cc(2, 0, 0, 5);
        let b = cc(0, 1, 1, 5);
        assert!(close(dice_data(&[a, b]), 4.0 / 6.0));
        assert!(close(iou_data(&[a, b]), 0.5));
        assert!(close(dice_image(&[a, b]), 0.5));
        assert!(close(dice_data(&[a]), 1.0));
        assert!(close(iou_data(&[a]), 1.0));
        assert!(close(iou_data(&[cc(0, 3, 2, 1)]), 0.0));
        assert!(close(dice_image(&[a]), 1.0));
        assert_eq!(dice_image(&[]), None);
    }

    #[test]
    fn per_image_dice_empty_conventions() {
        assert_eq!(cc(0, 0, 0, 9).dice(), 1.0);
        assert_eq!(cc(0, 3, 0, 6).dice(), 0.0);
        assert_eq!(cc(0, 0, 3, 6).dice(), 0.0);
    }

    #[test]
    fn dice_loss_perfect_and_half() {
        let gt = BinaryMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let prob = ProbMask::from_binary(&gt);
        assert_eq!(dice_loss(&prob, &gt, 1.0).unwrap(), 0.0);
        let half = ProbMask::constant(2, 2, 0.5).unwrap();
        assert!((dice_loss(&half, &gt, 1.0).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn focal_perfect_is_near_zero() {
        let gt = BinaryMask::new(1, 4, vec![true, false, true, false]).unwrap();
        let prob = ProbMask::from_binary(&gt);
        let l = focal_loss(&prob, &gt, 2.0, 0.25).unwrap();
        assert!((0.0..=1e-6).contains(&l));
    }

    #[test]
    fn combined_linearity() {
        let gt = BinaryMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let perfect = ProbMask::from_binary(&gt);
        let cfg = LossConfig::default();
        assert!(combined_loss(&perfect, &gt, &cfg).unwrap() < 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prob = ProbMask::new(2, 2, (0..4).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
        let d = dice_loss(&prob, &gt, 1.0).unwrap();
        let f = focal_loss(&prob, &gt, 2.0, 0.25).unwrap();
        let c = combined_loss(&prob, &gt, &cfg).unwrap();
        assert!((c - (0.5 * d + 0.5 * f)).abs() < 1e-15);
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            dice_smooth: 0.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn counts_json_uses_fn_key() {
        let s = serde_json::to_string(&cc(1, 2, 3, 4)).unwrap();
        assert_eq!(s, r#"{"tp":1,"fp":2,"fn":3,"tn":4}"#);
    }
}
