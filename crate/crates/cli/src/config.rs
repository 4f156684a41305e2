//! TOML run configuration. Relative paths resolve against the directory of
//! the config file; unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use ulcerseg::ensemble::{EnsembleSpec, Member};
use ulcerseg::geometry::{AugmentationConfig, TtaVariant};
use ulcerseg::metrics::LossConfig;
use ulcerseg::postprocess::PostprocessConfig;
use ulcerseg::predictor::{
    load_file_predictor, read_manifest, ConstantPredictor, Predictor, ToyModel, ToyPredictor,
    TrainingSchedule,
};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Where outputs go unless `--out-dir` is given.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub cv: CvSection,
    #[serde(default)]
    pub postprocess: PostprocessConfig,
    #[serde(default)]
    pub tta: TtaSection,
    #[serde(default)]
    pub training: TrainingSchedule,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub families: Vec<FamilySection>,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub root: PathBuf,
    /// Square canvas every image is zero-padded to.
    pub canvas: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub seed: u64,
    /// Existing fold table to reuse instead of drawing a new split.
    pub table: Option<PathBuf>,
}

impl Default for CvSection {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            table: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtaSection {
    pub enabled: bool,
    pub variants: Vec<TtaVariant>,
}

impl Default for TtaSection {
    fn default() -> Self {
        Self {
            enabled: true,
            variants: TtaVariant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub name: String,
    pub members: Vec<MemberSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MemberSection {
    /// Stored maps `<dir>/<id>.<ext>`; ids come from `manifest` when given,
    /// otherwise from the dataset.
    File {
        dir: PathBuf,
        manifest: Option<PathBuf>,
        #[serde(default = "unit_weight")]
        weight: f64,
    },
    Toy {
        model: PathBuf,
        #[serde(default = "unit_weight")]
        weight: f64,
    },
    Constant {
        value: f64,
        #[serde(default = "unit_weight")]
        weight: f64,
    },
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Directory of predicted masks; defaults to `<out_dir>/masks`.
    pub predictions: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Config = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.dataset.root);
        if let Some(p) = &mut self.cv.table {
            fix(p);
        }
        if let Some(p) = &mut self.evaluate.predictions {
            fix(p);
        }
        for fam in &mut self.families {
            for m in &mut fam.members {
                match m {
                    MemberSection::File { dir, manifest, .. } => {
                        fix(dir);
                        if let Some(p) = manifest {
                            fix(p);
                        }
                    }
                    MemberSection::Toy { model, .. } => fix(model),
                    MemberSection::Constant { .. } => {}
                }
            }
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let usage = |e: ulcerseg::Error| CliError::Usage(e.to_string());
        self.postprocess.validate().map_err(usage)?;
        self.training.validate().map_err(usage)?;
        self.augmentation.validate().map_err(usage)?;
        self.loss.validate().map_err(usage)?;
        if self.cv.folds < 2 {
            return Err(CliError::Usage(format!("cv.folds must be >= 2, got {}", self.cv.folds)));
        }
        if self.tta.enabled && self.tta.variants.is_empty() {
            return Err(CliError::Usage("tta.variants is empty while tta.enabled".into()));
        }
        for fam in &self.families {
            if fam.members.is_empty() {
                return Err(CliError::Usage(format!("family `{}` has no members", fam.name)));
            }
        }
        Ok(())
    }

    pub fn tta_variants(&self) -> Option<Vec<TtaVariant>> {
        self.tta.enabled.then(|| self.tta.variants.clone())
    }

    /// Instantiates every configured predictor family. `dataset_ids` serves
    /// as the id list for stored-map members without a manifest.
    pub fn build_families(&self, dataset_ids: &[String]) -> Result<Vec<EnsembleSpec>, CliError> {
        self.families
            .iter()
            .map(|fam| {
                let members = fam
                    .members
                    .iter()
                    .enumerate()
                    .map(|(i, m)| build_member(&fam.name, i, m, dataset_ids))
                    .collect::<Result<Vec<_>, _>>()?;
                EnsembleSpec::new(fam.name.clone(), members).map_err(|e| CliError::Usage(e.to_string()))
            })
            .collect()
    }
}

fn build_member(family: &str, index: usize, m: &MemberSection, dataset_ids: &[String]) -> Result<Member, CliError> {
    let name = format!("{family}[{index}]");
    let (predictor, weight): (Arc<dyn Predictor>, f64) = match m {
        MemberSection::File { dir, manifest, weight } => {
            let ids = match manifest {
                Some(p) => read_manifest(p)?,
                None => dataset_ids.to_vec(),
            };
            (Arc::new(load_file_predictor(name, dir, &ids)?), *weight)
        }
        MemberSection::Toy { model, weight } => {
            (Arc::new(ToyPredictor::new(name, ToyModel::load(model)?)), *weight)
        }
        MemberSection::Constant { value, weight } => (
            Arc::new(ConstantPredictor::new(name, *value).map_err(|e| CliError::Usage(e.to_string()))?),
            *weight,
        ),
    };
    Ok(Member { predictor, weight })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        Config::load(&path)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("[dataset]\nroot = \"data\"\n").unwrap();
        assert_eq!(cfg.cv.folds, 5);
        assert_eq!(cfg.postprocess.min_object_area, 100);
        assert_eq!(cfg.training.epochs, 80);
        assert_eq!(cfg.tta_variants().unwrap().len(), 8);
        assert!(cfg.dataset.root.ends_with("data") && cfg.dataset.root.is_absolute());
        assert!(cfg.families.is_empty());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "[dataset]\nroot = \"d\"\ncanvass = 5\n",
            "[dataset]\nroot = \"d\"\n[postprocess]\nthresh = 0.4\n",
            "[dataset]\nroot = \"d\"\n[extra]\n",
            "[dataset]\nroot = \"d\"\n[[families]]\nname = \"a\"\n[[families.members]]\nkind = \"toy\"\nmodel = \"m\"\nbogus = 1\n",
        ] {
            assert!(matches!(parse(text), Err(CliError::Usage(_))), "{text}");
        }
    }

    #[test]
    fn members_and_variants_parse() {
        let cfg = parse(
            r#"
[dataset]
root = "d"
canvas = 64
[tta]
variants = ["rot0", "rot90+hflip"]
[postprocess]
connectivity = 4
[[families]]
name = "a"
members = [
  { kind = "constant", value = 0.25 },
  { kind = "file", dir = "maps", weight = 2.0 },
]
"#,
        )
        .unwrap();
        assert_eq!(cfg.tta_variants().unwrap().len(), 2);
        assert_eq!(cfg.dataset.canvas, Some(64));
        assert!(matches!(cfg.families[0].members[1], MemberSection::File { weight, .. } if weight == 2.0));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse("[dataset]\nroot = \"d\"\n[postprocess]\nthreshold = 1.5\n").is_err());
        assert!(parse("[dataset]\nroot = \"d\"\n[cv]\nfolds = 1\n").is_err());
        assert!(parse("[dataset]\nroot = \"d\"\n[tta]\nvariants = [\"rot45\"]\n").is_err());
    }
}
