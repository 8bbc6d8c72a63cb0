//! Two-stage classifier training: stage 1 on whole originals, stage 2
//! fine-tuning the same weights on detector crops. Loss is categorical
//! cross-entropy over a softmax head; the optimizer is Adam; the built-in
//! backbone activates with swish. All randomness (weight init, batch
//! shuffling) derives from the stage config's seed.

pub mod activations;
mod adam;
mod checkpoint;
mod layers;
mod reference;

pub use activations::{swish, swish_grad};
pub use checkpoint::{load_checkpoint, meta_path, save_checkpoint};
pub use reference::image_to_input;

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{Manifest, SpeciesLabel, NUM_SPECIES};
use crate::raster::Image;
use adam::Adam;
use layers::softmax_f64;
use reference::{Gradients, ReferenceCnn};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid stage config: {0}")]
    BadConfig(String),
    #[error("image {id}: {source}")]
    Image {
        id: String,
        source: crate::dataset::DatasetError,
    },
    #[error("record {0} has no label")]
    Unlabeled(String),
    #[error("loss became non-finite ({loss}) in epoch {epoch}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("pretrained weights file {0} does not exist")]
    MissingPretrained(PathBuf),
    #[error("backbone {kind} runs on an external inference runtime; this build cannot execute {path}")]
    RuntimeUnavailable { kind: BackboneKind, path: PathBuf },
    #[error("checkpoint {path}: {source}")]
    CheckpointIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
}

/// Which data view a stage trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Originals,
    Crops,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Originals => "originals",
            Stage::Crops => "crops",
        })
    }
}

/// Where a stage's starting weights come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InitSpec {
    Fresh,
    PreviousStage,
    Pretrained(PathBuf),
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub input_resolution: u32,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub init: InitSpec,
    pub seed: u64,
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.input_resolution < 32 {
            return Err(TrainError::BadConfig(format!(
                "input_resolution {} below the 32-pixel floor",
                self.input_resolution
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::BadConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    InceptionV3,
    InceptionResnetV2,
    ReferenceCnn,
}

impl BackboneKind {
    pub fn name(&self) -> &'static str {
        match self {
            BackboneKind::InceptionV3 => "inception_v3",
            BackboneKind::InceptionResnetV2 => "inception_resnet_v2",
            BackboneKind::ReferenceCnn => "reference_cnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "inception_v3" => Some(BackboneKind::InceptionV3),
            "inception_resnet_v2" => Some(BackboneKind::InceptionResnetV2),
            "reference_cnn" => Some(BackboneKind::ReferenceCnn),
            _ => None,
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One epoch's summary. `epoch` counts cumulatively across stages.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub stage: Stage,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub loss: f64,
}

pub(crate) enum BackboneNet {
    Reference(ReferenceCnn),
}

/// A classifier with its training history. Obtained from
/// [`build_backbone`] or [`load_checkpoint`].
pub struct BackboneHandle {
    pub kind: BackboneKind,
    pub num_classes: usize,
    pub(crate) net: BackboneNet,
    pub history: Vec<EpochStats>,
    pub epochs_completed: usize,
    pub(crate) last_stage: Option<Stage>,
    pub(crate) seed: u64,
    /// Name used in fusion tie-breaking and prediction files.
    pub model_id: String,
}

impl fmt::Debug for BackboneHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackboneHandle")
            .field("kind", &self.kind)
            .field("num_classes", &self.num_classes)
            .field("epochs_completed", &self.epochs_completed)
            .field("model_id", &self.model_id)
            .finish_non_exhaustive()
    }
}

impl BackboneHandle {
    pub fn with_model_id(mut self, id: &str) -> Self {
        self.model_id = id.to_string();
        self
    }

    /// Raw weight views in fixed tensor order, for equality checks.
    pub fn weight_slices(&self) -> Vec<&[f32]> {
        match &self.net {
            BackboneNet::Reference(net) => net.param_slices(),
        }
    }
}

/// A 16-way probability vector; entries are non-negative and sum to 1
/// within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    pub probs: [f64; NUM_SPECIES],
}

impl PredictionVector {
    /// Highest-probability class; the lowest index wins exact ties.
    pub fn argmax(&self) -> (SpeciesLabel, f64) {
        let mut best = 0;
        for i in 1..NUM_SPECIES {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        (SpeciesLabel::from_index(best), self.probs[best])
    }
}

/// -ln of the probability assigned to the true class.
pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(f64::MIN_POSITIVE).ln()
}

/// Constructs a backbone. The built-in kind initializes from a seed
/// (`Fresh`) or a checkpoint file; the inception kinds require a pretrained
/// file and an external runtime this build does not bundle, so they fail
/// with a missing-file or runtime error.
pub fn build_backbone(
    kind: BackboneKind,
    init: &InitSpec,
    pretrained_source: Option<&Path>,
    seed: u64,
) -> Result<BackboneHandle, TrainError> {
    match kind {
        BackboneKind::ReferenceCnn => match init {
            InitSpec::Fresh => Ok(BackboneHandle {
                kind,
                num_classes: NUM_SPECIES,
                net: BackboneNet::Reference(ReferenceCnn::init(seed)),
                history: Vec::new(),
                epochs_completed: 0,
                last_stage: None,
                seed,
                model_id: kind.name().to_string(),
            }),
            InitSpec::Checkpoint(path) => load_checkpoint(path),
            InitSpec::Pretrained(path) => {
                if !path.exists() {
                    return Err(TrainError::MissingPretrained(path.clone()));
                }
                load_checkpoint(path)
            }
            InitSpec::PreviousStage => Err(TrainError::BadConfig(
                "previous_stage init only applies inside multistage_train".into(),
            )),
        },
        BackboneKind::InceptionV3 | BackboneKind::InceptionResnetV2 => {
            let path = match init {
                InitSpec::Pretrained(path) => path.clone(),
                _ => pretrained_source.map(Path::to_path_buf).ok_or_else(|| {
                    TrainError::BadConfig(format!(
                        "backbone {kind} requires pretrained weights"
                    ))
                })?,
            };
            if !path.exists() {
                return Err(TrainError::MissingPretrained(path));
            }
            Err(TrainError::RuntimeUnavailable { kind, path })
        }
    }
}

struct Loaded {
    inputs: Vec<Array3<f32>>,
    labels: Vec<usize>,
}

fn load_split(manifest: &Manifest, resolution: u32) -> Result<Loaded, TrainError> {
    if manifest.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    let records = manifest.records();
    let pairs = crate::exec::try_map(records, |rec| {
        let label = rec
            .label
            .ok_or_else(|| TrainError::Unlabeled(rec.id.clone()))?;
        let image = rec.load_image().map_err(|source| TrainError::Image {
            id: rec.id.clone(),
            source,
        })?;
        Ok::<_, TrainError>((image_to_input(&image, resolution), label.index()))
    })?;
    let (inputs, labels) = pairs.into_iter().unzip();
    Ok(Loaded { inputs, labels })
}

fn accuracy(net: &ReferenceCnn, data: &Loaded) -> f64 {
    let idx: Vec<usize> = (0..data.inputs.len()).collect();
    let hits = crate::exec::map(&idx, |&i| {
        let probs = net.probabilities(data.inputs[i].clone());
        let mut best = 0;
        for k in 1..NUM_SPECIES {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        u32::from(best == data.labels[i])
    });
    hits.iter().sum::<u32>() as f64 / data.inputs.len() as f64
}

/// Trains for `config.epochs` epochs and returns the updated handle with
/// one history entry per epoch. Epochs shuffle the training set, walk it in
/// mini-batches, and apply one Adam update per batch from gradients averaged
/// in batch order. Train accuracy is measured during the pass (each sample
/// scored by the weights current when its batch runs); validation accuracy
/// is measured after the epoch.
pub fn run_stage(
    model: BackboneHandle,
    train: &Manifest,
    val: &Manifest,
    config: &StageConfig,
) -> Result<BackboneHandle, TrainError> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(model);
    }
    let train_data = load_split(train, config.input_resolution)?;
    let val_data = load_split(val, config.input_resolution)?;

    let BackboneHandle {
        kind,
        num_classes,
        net,
        mut history,
        mut epochs_completed,
        model_id,
        ..
    } = model;
    let BackboneNet::Reference(mut net) = net;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate);
    let n = train_data.inputs.len();

    for _ in 0..config.epochs {
        let epoch = epochs_completed + 1;
        let mut order: Vec<usize> = (0..n).collect();
        crate::rng::shuffle(&mut rng, &mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Option<Gradients> = None;
            for &i in batch {
                let trace = net.forward(train_data.inputs[i].clone());
                let probs = softmax_f64(&trace.logits);
                let loss = cross_entropy(&probs, train_data.labels[i]);
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, loss });
                }
                loss_sum += loss;
                let argmax = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k)
                    .unwrap_or(0);
                correct += usize::from(argmax == train_data.labels[i]);

                let dlogits: Vec<f32> = probs
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| (p - f64::from(u8::from(k == train_data.labels[i]))) as f32)
                    .collect();
                let grads = net.backward(&trace, &dlogits);
                acc = Some(match acc {
                    None => grads,
                    Some(mut acc) => {
                        for (a, g) in acc.tensors.iter_mut().zip(&grads.tensors) {
                            for (av, gv) in a.iter_mut().zip(g) {
                                *av += *gv;
                            }
                        }
                        acc
                    }
                });
            }
            let mut acc = acc.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f32;
            for t in &mut acc.tensors {
                for v in t.iter_mut() {
                    *v *= scale;
                }
            }
            adam.step(&mut net.param_slices_mut(), &acc.tensors);
        }

        history.push(EpochStats {
            epoch,
            stage: config.stage,
            train_accuracy: correct as f64 / n as f64,
            val_accuracy: accuracy(&net, &val_data),
            loss: loss_sum / n as f64,
        });
        epochs_completed += 1;
    }

    Ok(BackboneHandle {
        kind,
        num_classes,
        net: BackboneNet::Reference(net),
        history,
        epochs_completed,
        last_stage: Some(config.stage),
        seed: config.seed,
        model_id,
    })
}

/// Runs stage 1 on originals, then stage 2 on crops starting from the
/// stage-1 weights. The returned history concatenates both stages, each
/// entry tagged with its stage.
pub fn multistage_train(
    kind: BackboneKind,
    originals_train: &Manifest,
    originals_val: &Manifest,
    crops_train: &Manifest,
    crops_val: &Manifest,
    stage1: &StageConfig,
    stage2: &StageConfig,
) -> Result<BackboneHandle, TrainError> {
    if stage1.stage != Stage::Originals {
        return Err(TrainError::BadConfig("stage 1 must train on originals".into()));
    }
    if stage2.stage != Stage::Crops {
        return Err(TrainError::BadConfig("stage 2 must train on crops".into()));
    }
    if stage2.init != InitSpec::PreviousStage {
        return Err(TrainError::BadConfig(
            "stage 2 must initialize from the previous stage".into(),
        ));
    }
    let model = build_backbone(kind, &stage1.init, None, stage1.seed)?;
    let model = run_stage(model, originals_train, originals_val, stage1)?;
    run_stage(model, crops_train, crops_val, stage2)
}

/// Resizes the image to `resolution` square, runs the forward pass, and
/// returns the normalized class distribution.
pub fn predict(model: &BackboneHandle, image: &Image, resolution: u32) -> PredictionVector {
    let BackboneNet::Reference(net) = &model.net;
    let probs_vec = net.probabilities(image_to_input(image, resolution));
    let mut probs = [0.0; NUM_SPECIES];
    probs.copy_from_slice(&probs_vec);
    PredictionVector { probs }
}
