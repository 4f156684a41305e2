use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{fold_ensemble_predict, fuse_all, EnsembleSpec};
use crate::error::{Error, Result};
use crate::geometry::TtaVariant;
use crate::io::{write_mask, write_prob_map};
use crate::mask::{BinaryMask, ProbMask};
use crate::pipeline::dataset::DatasetIndex;
use crate::postprocess::{postprocess, PostprocessConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOptions {
    /// `None` disables test-time augmentation.
    pub tta: Option<Vec<TtaVariant>>,
    pub postprocess: PostprocessConfig,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            tta: Some(TtaVariant::ALL.to_vec()),
            postprocess: PostprocessConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    /// Fused probability map before post-processing.
    pub prob: ProbMask,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InferenceOutput {
    pub predictions: Vec<Prediction>,
    pub failures: Vec<InferenceFailure>,
}

impl InferenceOutput {
    pub fn masks(&self) -> std::collections::BTreeMap<String, BinaryMask> {
        self.predictions
            .iter()
            .map(|p| (p.id.clone(), p.mask.clone()))
            .collect()
    }

    /// Writes `probs/<id>.png`, `masks/<id>.png` and `failures.tsv` under
    /// `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        for p in &self.predictions {
            write_prob_map(&out_dir.join("probs").join(format!("{}.png", p.id)), &p.prob)?;
            write_mask(&out_dir.join("masks").join(format!("{}.png", p.id)), &p.mask)?;
        }
        let mut text = String::from("id\terror\n");
        for f in &self.failures {
            text.push_str(&format!("{}\t{}\n", f.id, f.error.replace(['\t', '\n'], " ")));
        }
        let path = out_dir.join("failures.tsv");
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Fused map for one image: fold ensemble per family, then fusion across
/// families.
pub fn predict_fused(
    families: &[EnsembleSpec],
    id: &str,
    image: &crate::mask::ImageBuffer,
    tta: Option<&[TtaVariant]>,
) -> Result<ProbMask> {
    let per_family = families
        .iter()
        .map(|f| fold_ensemble_predict(f, id, image, tta))
        .collect::<Result<Vec<_>>>()?;
    fuse_all(&per_family)
}

/// Runs every image through the ensemble and post-processing. Images whose
/// predictors fail are listed in [`InferenceOutput::failures`] and the run
/// continues.
pub fn run_inference(
    index: &DatasetIndex,
    families: &[EnsembleSpec],
    opts: &InferenceOptions,
) -> Result<InferenceOutput> {
    if families.is_empty() {
        return Err(Error::InvalidConfig("no predictors configured".into()));
    }
    opts.postprocess.validate()?;
    let tta = opts.tta.as_deref();
    let results: Vec<_> = index
        .records()
        .par_iter()
        .map(|rec| {
            let out = predict_fused(families, &rec.id, &rec.image, tta).and_then(|prob| {
                let mask = postprocess(&prob, &opts.postprocess)?;
                Ok(Prediction {
                    id: rec.id.clone(),
                    prob,
                    mask,
                })
            });
            (rec.id.clone(), out)
        })
        .collect();

    let mut output = InferenceOutput::default();
    for (id, r) in results {
        match r {
            Ok(p) => output.predictions.push(p),
            Err(Error::InvalidConfig(msg)) => return Err(Error::InvalidConfig(msg)),
            Err(e) => output.failures.push(InferenceFailure {
                id,
                error: e.to_string(),
            }),
        }
    }
    Ok(output)
}
