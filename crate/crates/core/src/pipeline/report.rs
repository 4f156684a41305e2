//! Evaluation reports: per-image counts, aggregate scores, failure buckets
//! and their JSON / CSV / console renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Raster};
use crate::metrics::{confusion_counts, ConfusionCounts, MetricSet};
use crate::pipeline::dataset::DatasetIndex;

/// Per-image Dice strictly below this (and above zero) counts as poor.
pub const POOR_DICE: f64 = 0.60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub dice: f64,
    /// Scored as an empty prediction because no mask was supplied.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub missing_prediction: bool,
}

/// Why an image scored a Dice of exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroCause {
    /// No lesion in the ground truth, yet something was predicted.
    FalsePositiveOnEmptyGt,
    /// Lesion present but nothing predicted.
    MissedLesion,
    /// Both non-empty without any overlap.
    Disjoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroCase {
    pub id: String,
    pub cause: ZeroCause,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FailureBuckets {
    /// `0 < dice < 0.60`
    pub poor: Vec<String>,
    /// `dice == 0`
    pub zero: Vec<ZeroCase>,
}

/// Bucket for one image, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bucket {
    Poor,
    Zero(ZeroCause),
}

pub fn classify(counts: &ConfusionCounts) -> Option<Bucket> {
    let dice = counts.dice();
    if dice == 0.0 {
        let cause = match (counts.pred_positive() > 0, counts.gt_positive() > 0) {
            (true, false) => ZeroCause::FalsePositiveOnEmptyGt,
            (false, true) => ZeroCause::MissedLesion,
            (true, true) => ZeroCause::Disjoint,
            (false, false) => unreachable!("empty-empty scores 1"),
        };
        Some(Bucket::Zero(cause))
    } else if dice < POOR_DICE {
        Some(Bucket::Poor)
    } else {
        None
    }
}

impl FailureBuckets {
    pub fn from_records(records: &[ImageRecord]) -> Self {
        let mut b = Self::default();
        for r in records {
            match classify(&r.counts) {
                Some(Bucket::Poor) => b.poor.push(r.id.clone()),
                Some(Bucket::Zero(cause)) => b.zero.push(ZeroCase {
                    id: r.id.clone(),
                    cause,
                }),
                None => {}
            }
        }
        b
    }

    pub fn count(&self, cause: ZeroCause) -> usize {
        self.zero.iter().filter(|z| z.cause == cause).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Settings that produced the predictions (threshold, min_object_area,
    /// TTA variants, seeds, …).
    pub config: BTreeMap<String, serde_json::Value>,
    pub images: Vec<ImageRecord>,
    pub aggregate: MetricSet,
    pub buckets: FailureBuckets,
}

impl EvaluationReport {
    /// Assembles a report from per-image counts given in id order.
    pub fn from_counts(
        config: BTreeMap<String, serde_json::Value>,
        per_image: Vec<(String, ConfusionCounts, bool)>,
    ) -> Self {
        let images: Vec<ImageRecord> = per_image
            .into_iter()
            .map(|(id, counts, missing_prediction)| ImageRecord {
                id,
                dice: counts.dice(),
                counts,
                missing_prediction,
            })
            .collect();
        let counts: Vec<_> = images.iter().map(|r| r.counts).collect();
        Self {
            config,
            aggregate: MetricSet::from_counts(&counts),
            buckets: FailureBuckets::from_records(&images),
            images,
        }
    }

    pub fn counts(&self) -> Vec<ConfusionCounts> {
        self.images.iter().map(|r| r.counts).collect()
    }

    /// Checks that per-image Dice, aggregates and buckets are exactly what
    /// the embedded counts imply.
    pub fn validate(&self) -> Result<()> {
        for r in &self.images {
            if r.dice.to_bits() != r.counts.dice().to_bits() {
                return Err(Error::InconsistentReport(format!(
                    "image `{}` stores dice {} but counts give {}",
                    r.id,
                    r.dice,
                    r.counts.dice()
                )));
            }
        }
        let recomputed = MetricSet::from_counts(&self.counts());
        if recomputed != self.aggregate {
            return Err(Error::InconsistentReport(format!(
                "stored aggregate {:?} differs from recomputed {:?}",
                self.aggregate, recomputed
            )));
        }
        if FailureBuckets::from_records(&self.images) != self.buckets {
            return Err(Error::InconsistentReport(
                "failure buckets do not match per-image counts".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Parses and validates a report.
    pub fn from_json(text: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(text)?;
        report.validate()?;
        Ok(report)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Per-image table: `id,tp,fp,fn,tn,dice,bucket`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,tp,fp,fn,tn,dice,bucket\n");
        for r in &self.images {
            let bucket = match classify(&r.counts) {
                None => "",
                Some(Bucket::Poor) => "poor",
                Some(Bucket::Zero(ZeroCause::FalsePositiveOnEmptyGt)) => "zero:false-positive-on-empty-gt",
                Some(Bucket::Zero(ZeroCause::MissedLesion)) => "zero:missed-lesion",
                Some(Bucket::Zero(ZeroCause::Disjoint)) => "zero:disjoint",
            };
            let c = r.counts;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                csv_field(&r.id),
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                r.dice,
                bucket
            );
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }

    /// Console rendering: the metric table followed by the failure summary.
    pub fn render(&self, label: &str) -> String {
        let mut out = render_metrics_table(&[(label, &self.aggregate)]);
        out.push('\n');
        out.push_str(&render_buckets(&self.buckets, self.images.len()));
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.2}", x * 100.0),
        None => "n/a".to_string(),
    }
}

/// Column headers, in table order.
pub const TABLE_COLUMNS: [&str; 5] = [
    "image-based Dice [%]",
    "precision [%]",
    "recall [%]",
    "data-based IoU [%]",
    "data-based Dice [%]",
];

/// Fixed-width table with one row per labelled metric set; undefined scores
/// print as `n/a`.
pub fn render_metrics_table(rows: &[(&str, &MetricSet)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(8);
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "");
    for col in TABLE_COLUMNS {
        let _ = write!(out, "  {col:>w$}", w = col.len());
    }
    out.push('\n');
    let rule = label_w + TABLE_COLUMNS.iter().map(|c| c.len() + 2).sum::<usize>();
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for (label, m) in rows {
        let _ = write!(out, "{label:<label_w$}");
        let values = [m.dice_image, m.precision, m.recall, m.iou_data, m.dice_data];
        for (col, v) in TABLE_COLUMNS.iter().zip(values) {
            let _ = write!(out, "  {:>w$}", pct(v), w = col.len());
        }
        out.push('\n');
    }
    out
}

pub fn render_buckets(b: &FailureBuckets, n_images: usize) -> String {
    let below = b.poor.len() + b.zero.len();
    let mut out = format!(
        "{below} of {n_images} images scored Dice below {:.0}%, {} of them zero",
        POOR_DICE * 100.0,
        b.zero.len()
    );
    if !b.zero.is_empty() {
        let _ = write!(
            out,
            " (false positive on empty ground truth: {}, missed lesion: {}, disjoint: {})",
            b.count(ZeroCause::FalsePositiveOnEmptyGt),
            b.count(ZeroCause::MissedLesion),
            b.count(ZeroCause::Disjoint)
        );
    }
    out.push('\n');
    if !b.poor.is_empty() {
        let _ = writeln!(out, "poor: {}", b.poor.join(", "));
    }
    for z in &b.zero {
        let _ = writeln!(out, "zero: {} ({})", z.id, serde_json::to_value(z.cause).unwrap().as_str().unwrap());
    }
    out
}

/// Scores predicted masks against the ground truth in `index`.
///
/// Every image must have ground truth. Images without a prediction are an
/// error unless `allow_missing`, in which case they are scored as empty
/// predictions and flagged.
pub fn evaluate(
    predictions: &BTreeMap<String, BinaryMask>,
    index: &DatasetIndex,
    allow_missing: bool,
    config: BTreeMap<String, serde_json::Value>,
) -> Result<EvaluationReport> {
    let no_gt: Vec<String> = index
        .records()
        .iter()
        .filter(|r| r.mask.is_none())
        .map(|r| r.id.clone())
        .collect();
    if !no_gt.is_empty() {
        return Err(Error::MissingGroundTruth { ids: no_gt });
    }
    let missing: Vec<String> = index
        .records()
        .iter()
        .filter(|r| !predictions.contains_key(&r.id))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() && !allow_missing {
        return Err(Error::MissingPredictions { ids: missing });
    }

    let per_image = index
        .records()
        .par_iter()
        .map(|r| {
            let gt = r.mask.as_ref().expect("checked above");
            match predictions.get(&r.id) {
                Some(pred) => Ok((r.id.clone(), confusion_counts(pred, gt)?, false)),
                None => {
                    let empty = BinaryMask::empty(gt.height(), gt.width());
                    Ok((r.id.clone(), confusion_counts(&empty, gt)?, true))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::from_counts(config, per_image))
}
