//! End-to-end orchestration: stratified split, per-class augmentation,
//! detector crops, two training stages per backbone, fused prediction, and
//! evaluation. Every intermediate is persisted in documented text/PNG
//! formats, so any stage can be replayed from files. All outputs are built
//! in a staging directory that moves into `out_dir` only on success; an
//! aborted run leaves no torn files behind.

use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment_dataset, default_policy, format_count_report};
use crate::dataset::{split_train_val, ImageRecord, Manifest, Provenance};
use crate::detect::{
    crop_rois, detect_birds, save_fixture_detections, DetectionResult, FixtureDetector,
};
use crate::ensemble::{predict_image, save_predictions};
use crate::eval::{build_confusion, report, save_report, MetricsReport};
use crate::train::{
    build_backbone, run_stage, save_checkpoint, BackboneHandle, BackboneKind, InitSpec, Stage,
    StageConfig,
};

// Fixed artifact names under `out_dir`.
pub const SPLIT_TRAIN_MANIFEST: &str = "split_train.manifest";
pub const SPLIT_VAL_MANIFEST: &str = "split_val.manifest";
pub const AUGMENTED_MANIFEST: &str = "augmented.manifest";
pub const AUGMENT_REPORT: &str = "augment_report.txt";
pub const DETECTIONS_FILE: &str = "detections_used.txt";
pub const CROPS_TRAIN_MANIFEST: &str = "crops_train.manifest";
pub const CROPS_VAL_MANIFEST: &str = "crops_val.manifest";
pub const PREDICTIONS_FILE: &str = "predictions.txt";
pub const CONFUSION_FILE: &str = "confusion.txt";
pub const METRICS_FILE: &str = "metrics.txt";
pub const CHECKPOINTS_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigProblem {
    pub field: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

fn format_problems(problems: &[ConfigProblem]) -> String {
    problems
        .iter()
        .map(|p| format!("  - {p}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration invalid:\n{}", format_problems(.0))]
    InvalidConfig(Vec<ConfigProblem>),
    #[error("config file {path}: {reason}")]
    ConfigRead { path: PathBuf, reason: String },
    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn Error + Send + Sync + 'static>,
    },
}

fn stage_err<E: Error + Send + Sync + 'static>(
    stage: &'static str,
) -> impl FnOnce(E) -> PipelineError {
    move |source| PipelineError::Stage {
        stage,
        source: Box::new(source),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Optional checkpoint to start the stage from, overriding the default
    /// initialization (fresh weights for stage 1, stage-1 weights for
    /// stage 2).
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    /// Detection fixture covering training images (for stage-2 crops) and
    /// test images (for inference ROIs).
    pub detections: PathBuf,
    pub out_dir: PathBuf,
    /// One entry per ensemble member; members get distinct init seeds.
    #[serde(default = "default_backbones")]
    pub backbones: Vec<String>,
    #[serde(default = "default_score_threshold")]
    pub score_threshold: f32,
    #[serde(default)]
    pub pad_fraction: f32,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_resolution")]
    pub input_resolution: u32,
    #[serde(default = "default_true")]
    pub augment: bool,
    /// Overrides every class's augmentation target; `None` keeps the
    /// per-class defaults.
    #[serde(default)]
    pub augment_target_per_class: Option<usize>,
    pub stage1: StageSettings,
    pub stage2: StageSettings,
}

fn default_backbones() -> Vec<String> {
    vec!["reference_cnn".to_string(), "reference_cnn".to_string()]
}
fn default_score_threshold() -> f32 {
    0.5
}
fn default_val_fraction() -> f64 {
    0.2
}
fn default_resolution() -> u32 {
    64
}
fn default_true() -> bool {
    true
}

/// Parses a TOML config file. Relative paths inside it resolve against the
/// file's own directory.
pub fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    let read_err = |reason: String| PipelineError::ConfigRead {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
    let mut config: RunConfig = toml::from_str(&text).map_err(|e| read_err(e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    resolve(&mut config.train_manifest);
    resolve(&mut config.test_manifest);
    resolve(&mut config.detections);
    resolve(&mut config.out_dir);
    if let Some(p) = &mut config.stage1.init_checkpoint {
        resolve(p);
    }
    if let Some(p) = &mut config.stage2.init_checkpoint {
        resolve(p);
    }
    Ok(config)
}

/// Returns every problem that would stop [`run_end_to_end`]; empty means
/// executable. Each entry names the offending field.
pub fn validate_config(config: &RunConfig) -> Vec<ConfigProblem> {
    let mut problems = Vec::new();
    let mut problem = |field: &str, reason: String| {
        problems.push(ConfigProblem {
            field: field.to_string(),
            reason,
        })
    };
    for (field, path) in [
        ("train_manifest", &config.train_manifest),
        ("test_manifest", &config.test_manifest),
        ("detections", &config.detections),
    ] {
        if !path.exists() {
            problem(field, format!("{} does not exist", path.display()));
        }
    }
    for (field, ckpt) in [
        ("stage1.init_checkpoint", &config.stage1.init_checkpoint),
        ("stage2.init_checkpoint", &config.stage2.init_checkpoint),
    ] {
        if let Some(path) = ckpt {
            if !path.exists() {
                problem(field, format!("{} does not exist", path.display()));
            }
        }
    }
    if config.backbones.is_empty() {
        problem("backbones", "at least one backbone is required".into());
    }
    for (i, name) in config.backbones.iter().enumerate() {
        if BackboneKind::parse(name).is_none() {
            problem(&format!("backbones[{i}]"), format!("unknown backbone {name:?}"));
        }
    }
    if !(0.0..=1.0).contains(&config.score_threshold) {
        problem(
            "score_threshold",
            format!("{} outside [0,1]", config.score_threshold),
        );
    }
    if !(config.pad_fraction >= 0.0 && config.pad_fraction.is_finite()) {
        problem("pad_fraction", format!("{} must be >= 0", config.pad_fraction));
    }
    if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) {
        problem(
            "val_fraction",
            format!("{} outside (0,1)", config.val_fraction),
        );
    }
    if config.input_resolution < 32 {
        problem(
            "input_resolution",
            format!("{} below the 32-pixel floor", config.input_resolution),
        );
    }
    if let Some(0) = config.augment_target_per_class {
        problem("augment_target_per_class", "must be >= 1".into());
    }
    for (name, s) in [("stage1", &config.stage1), ("stage2", &config.stage2)] {
        if !(s.learning_rate > 0.0 && s.learning_rate.is_finite()) {
            problem(
                &format!("{name}.learning_rate"),
                format!("{} must be positive", s.learning_rate),
            );
        }
        if s.batch_size == 0 {
            problem(&format!("{name}.batch_size"), "must be >= 1".into());
        }
    }
    problems
}

/// Everything a finished run wrote, with the report parsed back in memory.
#[derive(Debug)]
pub struct RunOutputs {
    pub report: MetricsReport,
    pub out_dir: PathBuf,
}

/// Builds outputs under a hidden sibling of `out_dir`, then moves each
/// artifact into place on success. Dropping it without `commit` removes the
/// staging tree.
struct Staging {
    root: PathBuf,
    committed: bool,
}

impl Staging {
    fn new(out_dir: &Path) -> std::io::Result<Self> {
        let parent = out_dir.parent().unwrap_or_else(|| Path::new("."));
        fs::create_dir_all(parent)?;
        let name = format!(
            ".staging-{}-{}",
            out_dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into()),
            std::process::id()
        );
        let root = parent.join(name);
        if root.exists() {
            fs::remove_dir_all(&root)?;
        }
        fs::create_dir_all(&root)?;
        Ok(Staging {
            root,
            committed: false,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Moves every staged entry into `out_dir`, replacing same-named
    /// entries from earlier runs.
    fn commit(mut self, out_dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(out_dir)?;
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let target = out_dir.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target)?;
            } else if target.exists() {
                fs::remove_file(&target)?;
            }
            fs::rename(entry.path(), &target)?;
        }
        fs::remove_dir(&self.root)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.root);
        }
    }
}

fn io_stage_err(stage: &'static str) -> impl FnOnce(std::io::Error) -> PipelineError {
    move |source| PipelineError::Stage {
        stage,
        source: Box::new(source),
    }
}

/// Detects (via the fixture), crops, and materializes ROI images for every
/// record, returning crop records that inherit the source's label and
/// split. Records without a confident box contribute no crops.
fn materialize_crops(
    records: &[ImageRecord],
    fixture: &FixtureDetector,
    detections_out: &mut BTreeMap<String, DetectionResult>,
    config: &RunConfig,
    crops_dir: &Path,
) -> Result<Vec<ImageRecord>, PipelineError> {
    let results = crate::exec::try_map(records, |rec| {
        let image = rec.load_image().map_err(stage_err("detect"))?;
        let detection = detect_birds(&rec.id, &image, fixture, config.score_threshold)
            .map_err(stage_err("detect"))?;
        let crops = crop_rois(&image, &detection, config.pad_fraction);
        Ok::<_, PipelineError>((detection, crops))
    })?;

    let mut crop_records = Vec::new();
    for (rec, (detection, crops)) in records.iter().zip(results) {
        detections_out.insert(rec.id.clone(), detection);
        for (k, crop) in crops.iter().enumerate() {
            let id = format!("{}__crop{k}", rec.id);
            let path = crops_dir.join(format!("{id}.png"));
            crop.save(&path).map_err(stage_err("detect"))?;
            crop_records.push(ImageRecord {
                id,
                path,
                label: rec.label,
                width: crop.width(),
                height: crop.height(),
                split: rec.split,
                provenance: Provenance::Crop,
            });
        }
    }
    Ok(crop_records)
}

fn stage_config(
    stage: Stage,
    settings: &StageSettings,
    default_init: InitSpec,
    resolution: u32,
    seed: u64,
) -> StageConfig {
    StageConfig {
        stage,
        input_resolution: resolution,
        epochs: settings.epochs,
        learning_rate: settings.learning_rate,
        batch_size: settings.batch_size,
        init: match &settings.init_checkpoint {
            Some(path) => InitSpec::Checkpoint(path.clone()),
            None => default_init,
        },
        seed,
    }
}

/// Runs the whole pipeline and returns the final metrics. Identical config
/// and seed reproduce byte-identical prediction files.
pub fn run_end_to_end(config: &RunConfig) -> Result<RunOutputs, PipelineError> {
    let problems = validate_config(config);
    if !problems.is_empty() {
        return Err(PipelineError::InvalidConfig(problems));
    }

    let staging = Staging::new(&config.out_dir).map_err(io_stage_err("setup"))?;

    // Split.
    let full_train = Manifest::load(&config.train_manifest).map_err(stage_err("ingest"))?;
    let test_manifest = Manifest::load(&config.test_manifest).map_err(stage_err("ingest"))?;
    let (train_split, val_split) =
        split_train_val(&full_train, config.val_fraction, config.seed)
            .map_err(stage_err("split"))?;
    train_split
        .save(&staging.path(SPLIT_TRAIN_MANIFEST))
        .map_err(stage_err("split"))?;
    val_split
        .save(&staging.path(SPLIT_VAL_MANIFEST))
        .map_err(stage_err("split"))?;

    // Augment the training split only; validation stays untouched.
    let stage1_train = if config.augment {
        let aug_dir = staging.path("augmented");
        fs::create_dir_all(&aug_dir).map_err(io_stage_err("augment"))?;
        let mut policies = default_policy();
        if let Some(target) = config.augment_target_per_class {
            for policy in policies.values_mut() {
                policy.target_total = target;
            }
        }
        let (augmented, counts) =
            augment_dataset(&train_split, &policies, config.seed, &aug_dir)
                .map_err(stage_err("augment"))?;
        augmented
            .save(&staging.path(AUGMENTED_MANIFEST))
            .map_err(stage_err("augment"))?;
        fs::write(
            staging.path(AUGMENT_REPORT),
            format_count_report(&counts),
        )
        .map_err(io_stage_err("augment"))?;
        augmented
    } else {
        train_split.clone()
    };

    // Detector crops for stage 2, from the original (pre-augmentation)
    // split so fixture boxes still line up with pixels.
    let fixture =
        FixtureDetector::from_file(&config.detections).map_err(stage_err("detect"))?;
    let crops_dir = staging.path("crops");
    fs::create_dir_all(&crops_dir).map_err(io_stage_err("detect"))?;
    let mut used_detections = BTreeMap::new();
    let crops_train_records = materialize_crops(
        train_split.records(),
        &fixture,
        &mut used_detections,
        config,
        &crops_dir,
    )?;
    let crops_val_records = materialize_crops(
        val_split.records(),
        &fixture,
        &mut used_detections,
        config,
        &crops_dir,
    )?;
    let crops_train = Manifest::from_records(crops_train_records).map_err(stage_err("detect"))?;
    let crops_val = Manifest::from_records(crops_val_records).map_err(stage_err("detect"))?;
    crops_train
        .save(&staging.path(CROPS_TRAIN_MANIFEST))
        .map_err(stage_err("detect"))?;
    crops_val
        .save(&staging.path(CROPS_VAL_MANIFEST))
        .map_err(stage_err("detect"))?;
    save_fixture_detections(&used_detections, &staging.path(DETECTIONS_FILE))
        .map_err(stage_err("detect"))?;

    // Two training stages per ensemble member, checkpointing each stage.
    let ckpt_dir = staging.path(CHECKPOINTS_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(io_stage_err("train"))?;
    let mut models: Vec<BackboneHandle> = Vec::new();
    for (i, name) in config.backbones.iter().enumerate() {
        let kind = BackboneKind::parse(name).expect("validated above");
        let member_seed = config.seed.wrapping_add(i as u64);
        let model_id = format!("{}_{i}", kind.name());
        let s1 = stage_config(
            Stage::Originals,
            &config.stage1,
            InitSpec::Fresh,
            config.input_resolution,
            member_seed,
        );
        let model = build_backbone(kind, &s1.init, None, member_seed)
            .map_err(stage_err("train"))?
            .with_model_id(&model_id);
        let model = run_stage(model, &stage1_train, &val_split, &s1).map_err(stage_err("train"))?;
        save_checkpoint(&model, &ckpt_dir.join(format!("{model_id}_stage1.ckpt")))
            .map_err(stage_err("train"))?;

        let s2 = stage_config(
            Stage::Crops,
            &config.stage2,
            InitSpec::PreviousStage,
            config.input_resolution,
            member_seed,
        );
        let model = match &s2.init {
            InitSpec::Checkpoint(path) => crate::train::load_checkpoint(path)
                .map_err(stage_err("train"))?
                .with_model_id(&model_id),
            _ => model,
        };
        let model = run_stage(model, &crops_train, &crops_val, &s2).map_err(stage_err("train"))?;
        save_checkpoint(&model, &ckpt_dir.join(format!("{model_id}_stage2.ckpt")))
            .map_err(stage_err("train"))?;
        models.push(model);
    }

    // Fused prediction over the test set. Images the fixture does not
    // cover yield zero boxes, which forces the whole-image fallback.
    let predictions = crate::exec::try_map(test_manifest.records(), |rec| {
        let image = rec.load_image().map_err(stage_err("predict"))?;
        let detection = detect_birds(&rec.id, &image, &fixture, config.score_threshold)
            .map_err(stage_err("predict"))?;
        predict_image(
            &image,
            &rec.id,
            &models,
            &detection,
            config.input_resolution,
            config.pad_fraction,
        )
        .map_err(stage_err("predict"))
    })?;
    save_predictions(&predictions, &staging.path(PREDICTIONS_FILE))
        .map_err(stage_err("predict"))?;

    // Evaluate against manifest labels.
    let truth: Vec<_> = test_manifest
        .records()
        .iter()
        .map(|r| {
            r.label
                .ok_or_else(|| crate::train::TrainError::Unlabeled(r.id.clone()))
        })
        .collect::<Result<_, _>>()
        .map_err(stage_err("evaluate"))?;
    let predicted: Vec<_> = predictions.iter().map(|p| p.label).collect();
    let matrix = build_confusion(&truth, &predicted).map_err(stage_err("evaluate"))?;
    matrix
        .save_text_grid(&staging.path(CONFUSION_FILE))
        .map_err(stage_err("evaluate"))?;
    let metrics = report(&matrix).map_err(stage_err("evaluate"))?;
    save_report(&metrics, &staging.path(METRICS_FILE)).map_err(stage_err("evaluate"))?;

    staging
        .commit(&config.out_dir)
        .map_err(io_stage_err("finalize"))?;
    Ok(RunOutputs {
        report: metrics,
        out_dir: config.out_dir.clone(),
    })
}
