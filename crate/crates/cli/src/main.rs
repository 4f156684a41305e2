mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ulcerseg::ensemble::{split_folds, FoldAssignment};
use ulcerseg::pipeline::{
    evaluate, ingest, read_prediction_masks, run_inference, train_cross_validated,
    write_dataset, CvTrainingConfig, DatasetIndex, EvaluationReport, InferenceOptions,
};
use ulcerseg::synthetic::{generate_blob_dataset, BlobConfig};

use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Lib(#[from] ulcerseg::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 3,
            CliError::Lib(ulcerseg::Error::InvalidConfig(_)) => 1,
            CliError::Lib(e) if e.is_data_error() => 2,
            CliError::Lib(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Ensemble segmentation of wound images: fold splits, toy training,
/// ensemble prediction with test-time augmentation, and evaluation.
#[derive(Debug, Parser)]
#[command(name = "ulcerseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a seeded k-fold split of the dataset and write `folds.tsv`.
    Split(SplitArgs),
    /// Train one toy pixel classifier per fold.
    TrainToy(SplitArgs),
    /// Run the configured predictor families over the dataset.
    Predict(PredictArgs),
    /// Score predicted masks against the ground truth.
    Evaluate(EvaluateArgs),
    /// Render a saved evaluation report as a table.
    Report(ReportArgs),
    /// Write a procedurally generated blob dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(Config, PathBuf)> {
        let cfg = Config::load(&self.config)?;
        let out = self.out_dir.clone().unwrap_or_else(|| cfg.out_dir.clone());
        Ok((cfg, out))
    }
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides `cv.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `cv.folds`.
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    common: Common,
    /// Disable test-time augmentation.
    #[arg(long)]
    no_tta: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Score images without a predicted mask as empty predictions.
    #[arg(long)]
    allow_missing: bool,
    /// Directory of predicted masks; overrides `evaluate.predictions`.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report file; defaults to `report.json` in the output directory.
    report: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where `report.csv` and `table.txt` go; defaults to the report's directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 48)]
    size: usize,
    #[arg(long, default_value_t = 0.0)]
    empty_fraction: f64,
    /// Leave out `masks/`.
    #[arg(long)]
    no_masks: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Split(a) => cmd_split(&a),
        Command::TrainToy(a) => cmd_train_toy(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| ulcerseg::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| {
        CliError::Lib(ulcerseg::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn load_dataset(cfg: &Config) -> Result<DatasetIndex> {
    let index = ingest(&cfg.dataset.root, cfg.dataset.canvas)?;
    if index.is_empty() {
        return Err(ulcerseg::Error::Dataset(format!(
            "no images under {}",
            cfg.dataset.root.join("images").display()
        ))
        .into());
    }
    Ok(index)
}

/// Fold table from `cv.table` when configured, otherwise a fresh split.
fn fold_assignment(cfg: &Config, index: &DatasetIndex, k: usize, seed: u64) -> Result<FoldAssignment> {
    let Some(path) = &cfg.cv.table else {
        return Ok(split_folds(index.len(), k, seed)?);
    };
    let text = std::fs::read_to_string(path).map_err(|e| ulcerseg::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let (ids, folds) = FoldAssignment::from_table(&text, k)?;
    // reorder to the index's id order
    let by_id: BTreeMap<&str, usize> = ids.iter().map(String::as_str).zip(folds.assignment().iter().copied()).collect();
    let assignment = index
        .ids()
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| ulcerseg::Error::FoldTable(format!("`{id}` is not in {}", path.display())))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if ids.len() != assignment.len() {
        return Err(ulcerseg::Error::FoldTable(format!(
            "{} lists {} ids, dataset has {}",
            path.display(),
            ids.len(),
            assignment.len()
        ))
        .into());
    }
    Ok(FoldAssignment::new(k, assignment)?)
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let (cfg, out) = a.common.load()?;
    let k = a.folds.unwrap_or(cfg.cv.folds);
    let seed = a.seed.unwrap_or(cfg.cv.seed);
    let index = load_dataset(&cfg)?;
    let folds = split_folds(index.len(), k, seed)?;
    write_text(&out.join("folds.tsv"), &folds.to_table(&index.ids())?)?;
    println!("{} images in {k} folds of sizes {:?} (seed {seed})", index.len(), folds.fold_sizes());
    Ok(())
}

fn cmd_train_toy(a: &SplitArgs) -> Result<()> {
    let (cfg, out) = a.common.load()?;
    let k = a.folds.unwrap_or(cfg.cv.folds);
    let seed = a.seed.unwrap_or(cfg.cv.seed);
    let index = load_dataset(&cfg)?;
    if !index.is_complete() {
        let missing: Vec<_> = index.records().iter().filter(|r| r.mask.is_none()).map(|r| r.id.clone()).collect();
        return Err(ulcerseg::Error::MissingGroundTruth { ids: missing }.into());
    }
    let folds = fold_assignment(&cfg, &index, k, seed)?;
    let training = CvTrainingConfig {
        schedule: cfg.training.clone(),
        loss: cfg.loss.clone(),
        augmentation: cfg.augmentation.clone(),
        seed,
    };
    let outcomes = train_cross_validated(&index.labelled_pairs(), &folds, &training)?;

    write_text(&out.join("folds.tsv"), &folds.to_table(&index.ids())?)?;
    let mut history = String::from("fold\tepoch\tlr\tmean_train_loss\tval_dice\tsteps\n");
    for (f, o) in outcomes.iter().enumerate() {
        o.model.save(&out.join("models").join(format!("fold{f}.json")))?;
        for e in &o.history {
            history.push_str(&format!(
                "{f}\t{}\t{}\t{}\t{}\t{}\n",
                e.epoch, e.lr, e.mean_train_loss, e.val_dice, e.steps
            ));
        }
        println!("fold {f}: best validation Dice {:.4} at epoch {}", o.best_val_dice, o.best_epoch);
    }
    write_text(&out.join("training.tsv"), &history)?;
    println!("models written to {}", out.join("models").display());
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let (cfg, out) = a.common.load()?;
    if cfg.families.is_empty() {
        return Err(CliError::Usage(format!(
            "{} declares no predictors; add a [[families]] section",
            a.common.config.display()
        )));
    }
    let index = load_dataset(&cfg)?;
    let families = cfg.build_families(&index.ids())?;
    let opts = InferenceOptions {
        tta: if a.no_tta { None } else { cfg.tta_variants() },
        postprocess: cfg.postprocess.clone(),
    };
    let output = run_inference(&index, &families, &opts)?;
    output.write(&out)?;
    for f in &output.failures {
        eprintln!("warning: `{}` failed: {}", f.id, f.error);
    }
    println!(
        "{} of {} images predicted into {}",
        output.predictions.len(),
        index.len(),
        out.display()
    );
    if output.predictions.is_empty() {
        return Err(CliError::Runtime("every image failed".into()));
    }
    Ok(())
}

fn config_echo(cfg: &Config, predictions: &Path) -> BTreeMap<String, serde_json::Value> {
    let variants: Vec<String> = cfg.tta_variants().unwrap_or_default().iter().map(|v| v.to_string()).collect();
    BTreeMap::from([
        ("threshold".to_string(), json!(cfg.postprocess.threshold)),
        ("min_object_area".to_string(), json!(cfg.postprocess.min_object_area)),
        ("connectivity".to_string(), json!(u8::from(cfg.postprocess.connectivity))),
        ("tta_variants".to_string(), json!(variants)),
        ("canvas".to_string(), json!(cfg.dataset.canvas)),
        ("folds".to_string(), json!(cfg.cv.folds)),
        ("cv_seed".to_string(), json!(cfg.cv.seed)),
        ("augmentation_seed".to_string(), json!(cfg.augmentation.rng_seed)),
        ("predictions".to_string(), json!(predictions.display().to_string())),
    ])
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let (cfg, out) = a.common.load()?;
    let pred_dir = a
        .predictions
        .clone()
        .or_else(|| cfg.evaluate.predictions.clone())
        .unwrap_or_else(|| out.join("masks"));
    let index = load_dataset(&cfg)?;
    let (preds, missing) = read_prediction_masks(&pred_dir, &index.ids())?;
    if !missing.is_empty() && a.allow_missing {
        eprintln!(
            "warning: {} images have no mask in {}; scored as empty",
            missing.len(),
            pred_dir.display()
        );
    }
    let report = evaluate(&preds, &index, a.allow_missing, config_echo(&cfg, &pred_dir))?;
    report.write(&out)?;
    print!("{}", report.render("ensemble"));
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let path = match (&a.report, &a.config) {
        (Some(p), _) => p.clone(),
        (None, Some(c)) => {
            let cfg = Config::load(c)?;
            a.out_dir.clone().unwrap_or(cfg.out_dir).join("report.json")
        }
        (None, None) => return Err(CliError::Usage("give a report file or --config".into())),
    };
    let report = EvaluationReport::load(&path)?;
    let out = a
        .out_dir
        .clone()
        .unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
    let table = report.render("ensemble");
    write_text(&out.join("table.txt"), &table)?;
    write_text(&out.join("report.csv"), &report.to_csv())?;
    print!("{table}");
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if a.count == 0 || a.size == 0 || !(0.0..=1.0).contains(&a.empty_fraction) {
        return Err(CliError::Usage(
            "count and size must be positive, empty-fraction in [0, 1]".into(),
        ));
    }
    let cfg = BlobConfig {
        size: a.size,
        empty_fraction: a.empty_fraction,
        ..BlobConfig::default()
    };
    let samples = generate_blob_dataset(a.count, &cfg, a.seed);
    write_dataset(&a.out_dir, &samples, !a.no_masks)?;
    println!("{} images written to {}", samples.len(), a.out_dir.display());
    Ok(())
}
