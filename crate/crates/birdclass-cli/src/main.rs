//! Command-line driver: each pipeline stage as a composable subcommand,
//! plus `run` for the whole flow and `synth` for the generated test
//! dataset. Exits nonzero with a stage-tagged diagnostic on any failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use birdclass::augment::{augment_dataset, default_policy, format_count_report};
use birdclass::dataset::{ingest_directory, Manifest};
use birdclass::detect::{
    detect_birds, save_fixture_detections, DetectorBackend, FixtureDetector, ModelDetector,
};
use birdclass::ensemble::{load_predictions, predict_image, save_predictions};
use birdclass::eval::{build_confusion, format_report, report, save_report, ConfusionMatrix};
use birdclass::pipeline::{load_config, run_end_to_end, validate_config};
use birdclass::synth::{generate, SynthConfig};
use birdclass::train::{
    build_backbone, load_checkpoint, run_stage, save_checkpoint, BackboneKind, InitSpec, Stage,
    StageConfig,
};

#[derive(Parser)]
#[command(name = "birdclass", version, about = "Bird species classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a manifest from a directory of per-species image folders.
    Ingest {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expand every class toward its target count with seeded transforms.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        /// Policy name; only `default` (the per-species table) exists.
        #[arg(long, default_value = "default")]
        policy: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        out_manifest: PathBuf,
    },
    /// Run a detector over a manifest and write a replayable box file.
    Detect {
        #[arg(long)]
        manifest: PathBuf,
        /// `fixture:<path>` replays boxes from a file; `model:<path>` names
        /// a serialized detector (requires an external runtime).
        #[arg(long)]
        backend: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage of a backbone and write a checkpoint.
    Train {
        /// 1 trains on whole images, 2 fine-tunes on crops.
        #[arg(long)]
        stage: u8,
        #[arg(long)]
        backbone: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
        /// `fresh`, `pretrained:<path>`, or a checkpoint path.
        #[arg(long)]
        init: String,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to 1e-3 for stage 1 and 1e-4 for stage 2.
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 64)]
        resolution: u32,
    },
    /// Classify a manifest with fused model predictions over detector ROIs.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Comma-separated checkpoint paths.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f32,
        #[arg(long, default_value_t = 0.0)]
        pad: f32,
        #[arg(long, default_value_t = 64)]
        resolution: u32,
    },
    /// Score a prediction file against manifest labels.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render a saved confusion matrix as a heatmap image.
    Report {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        plot: PathBuf,
        #[arg(long, default_value_t = 24)]
        cell_px: u32,
    },
    /// Execute the full pipeline from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate the synthetic shapes dataset with its detection fixture.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        train_per_class: usize,
        #[arg(long, default_value_t = 5)]
        test_per_class: usize,
        #[arg(long, default_value_t = 3)]
        boxless_test: usize,
        #[arg(long, default_value_t = 96)]
        image_size: u32,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
}

impl Command {
    fn tag(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Augment { .. } => "augment",
            Command::Detect { .. } => "detect",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Report { .. } => "report",
            Command::Run { .. } => "run",
            Command::Synth { .. } => "synth",
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let tag = cli.command.tag();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("[{tag}] error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { images, out } => {
            let manifest = ingest_directory(&images)?;
            manifest.save(&out)?;
            println!("ingested {} images into {}", manifest.records().len(), out.display());
            for (label, n) in manifest.class_histogram() {
                println!("  {} {}", label.code(), n);
            }
            Ok(())
        }
        Command::Augment {
            manifest,
            policy,
            seed,
            out_dir,
            out_manifest,
        } => {
            if policy != "default" {
                bail!("unknown policy {policy:?}; only `default` exists");
            }
            let input = Manifest::load(&manifest)?;
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let (expanded, counts) = augment_dataset(&input, &default_policy(), seed, &out_dir)?;
            expanded.save(&out_manifest)?;
            print!("{}", format_count_report(&counts));
            Ok(())
        }
        Command::Detect {
            manifest,
            backend,
            threshold,
            out,
        } => {
            let input = Manifest::load(&manifest)?;
            let backend = parse_backend(&backend)?;
            let mut results = BTreeMap::new();
            for rec in input.records() {
                let image = rec.load_image()?;
                let detection = detect_birds(&rec.id, &image, backend.as_ref(), threshold)?;
                results.insert(rec.id.clone(), detection);
            }
            save_fixture_detections(&results, &out)?;
            let boxes: usize = results.values().map(|r| r.boxes.len()).sum();
            println!(
                "detected {boxes} boxes across {} images into {}",
                results.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            stage,
            backbone,
            manifest,
            val,
            epochs,
            seed,
            init,
            out,
            learning_rate,
            batch_size,
            resolution,
        } => {
            let stage = match stage {
                1 => Stage::Originals,
                2 => Stage::Crops,
                other => bail!("stage must be 1 or 2, got {other}"),
            };
            let kind = BackboneKind::parse(&backbone).with_context(|| {
                format!(
                    "unknown backbone {backbone:?}; expected inception_v3, \
                     inception_resnet_v2, or reference_cnn"
                )
            })?;
            let init = parse_init(&init);
            let config = StageConfig {
                stage,
                input_resolution: resolution,
                epochs,
                learning_rate: learning_rate.unwrap_or(match stage {
                    Stage::Originals => 1e-3,
                    Stage::Crops => 1e-4,
                }),
                batch_size,
                init: init.clone(),
                seed,
            };
            let train_manifest = Manifest::load(&manifest)?;
            let val_manifest = Manifest::load(&val)?;
            let model = build_backbone(kind, &init, None, seed)?;
            let model = run_stage(model, &train_manifest, &val_manifest, &config)?;
            for e in &model.history {
                println!(
                    "epoch {:>3} [{}] loss {:.4} train_acc {:.4} val_acc {:.4}",
                    e.epoch, e.stage, e.loss, e.train_accuracy, e.val_accuracy
                );
            }
            save_checkpoint(&model, &out)?;
            println!("checkpoint written to {}", out.display());
            Ok(())
        }
        Command::Predict {
            manifest,
            detections,
            models,
            out,
            threshold,
            pad,
            resolution,
        } => {
            let input = Manifest::load(&manifest)?;
            let fixture = FixtureDetector::from_file(&detections)?;
            let mut handles = Vec::new();
            for path in &models {
                handles.push(load_checkpoint(path)?);
            }
            let mut predictions = Vec::new();
            for rec in input.records() {
                let image = rec.load_image()?;
                let detection = detect_birds(&rec.id, &image, &fixture, threshold)?;
                predictions.push(predict_image(
                    &image, &rec.id, &handles, &detection, resolution, pad,
                )?);
            }
            save_predictions(&predictions, &out)?;
            let fallbacks = predictions.iter().filter(|p| p.fallback_used).count();
            println!(
                "predicted {} images ({fallbacks} whole-image fallbacks) into {}",
                predictions.len(),
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            truth,
            predictions,
            out_dir,
        } => {
            let manifest = Manifest::load(&truth)?;
            let preds = load_predictions(&predictions)?;
            let by_id: BTreeMap<&str, _> =
                preds.iter().map(|p| (p.image_id.as_str(), p.label)).collect();
            if preds.len() != by_id.len() {
                bail!("prediction file repeats an image id");
            }
            let mut truth_labels = Vec::new();
            let mut predicted = Vec::new();
            for rec in manifest.records() {
                let label = rec
                    .label
                    .with_context(|| format!("record {} has no label", rec.id))?;
                let pred = by_id
                    .get(rec.id.as_str())
                    .with_context(|| format!("no prediction for image {}", rec.id))?;
                truth_labels.push(label);
                predicted.push(*pred);
            }
            if by_id.len() != truth_labels.len() {
                bail!(
                    "{} predictions do not match any manifest record",
                    by_id.len() - truth_labels.len()
                );
            }
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let matrix = build_confusion(&truth_labels, &predicted)?;
            matrix.save_text_grid(&out_dir.join("confusion.txt"))?;
            let metrics = report(&matrix)?;
            save_report(&metrics, &out_dir.join("metrics.txt"))?;
            print!("{}", format_report(&metrics));
            Ok(())
        }
        Command::Report {
            matrix,
            plot,
            cell_px,
        } => {
            let matrix = ConfusionMatrix::load_text_grid(&matrix)?;
            matrix.save_heatmap(&plot, cell_px)?;
            println!("heatmap written to {}", plot.display());
            Ok(())
        }
        Command::Run { config } => {
            let config = load_config(&config)?;
            let problems = validate_config(&config);
            if !problems.is_empty() {
                for p in &problems {
                    eprintln!("config problem: {p}");
                }
                bail!("{} config problem(s)", problems.len());
            }
            let outputs = run_end_to_end(&config)?;
            print!("{}", format_report(&outputs.report));
            println!("artifacts in {}", outputs.out_dir.display());
            Ok(())
        }
        Command::Synth {
            out,
            train_per_class,
            test_per_class,
            boxless_test,
            image_size,
            seed,
        } => {
            let output = generate(
                &out,
                &SynthConfig {
                    train_per_class,
                    test_per_class,
                    boxless_test,
                    image_size,
                    seed,
                },
            )?;
            println!("train manifest: {}", output.train_manifest_path.display());
            println!("test manifest:  {}", output.test_manifest_path.display());
            println!("detections:     {}", output.detections_path.display());
            Ok(())
        }
    }
}

fn parse_backend(spec: &str) -> Result<Box<dyn DetectorBackend>> {
    if let Some(path) = spec.strip_prefix("fixture:") {
        Ok(Box::new(FixtureDetector::from_file(Path::new(path))?))
    } else if let Some(path) = spec.strip_prefix("model:") {
        Ok(Box::new(ModelDetector::from_file(Path::new(path))?))
    } else {
        bail!("backend must be fixture:<path> or model:<path>, got {spec:?}")
    }
}

fn parse_init(spec: &str) -> InitSpec {
    if spec == "fresh" {
        InitSpec::Fresh
    } else if let Some(path) = spec.strip_prefix("pretrained:") {
        InitSpec::Pretrained(PathBuf::from(path))
    } else {
        InitSpec::Checkpoint(PathBuf::from(spec))
    }
}
