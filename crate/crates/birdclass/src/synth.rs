//! Procedural dataset generator: 16 classes drawn as four shapes in four
//! colors on cluttered gray backgrounds, plus a detection fixture marking
//! each shape's box. Classes are separable by construction, which gives
//! pipeline and training tests a learnable problem with known answers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{
    DatasetError, ImageRecord, Manifest, Provenance, SpeciesLabel, Split, NUM_SPECIES,
};
use crate::detect::{save_fixture_detections, BoundingBox, DetectError, DetectionResult};
use crate::raster::{Image, RasterError};
use crate::rng::uniform;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("invalid synth config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// This many test images, spread across classes, get no detection rows.
    pub boxless_test: usize,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_per_class: 20,
            test_per_class: 5,
            boxless_test: 3,
            image_size: 96,
            seed: 17,
        }
    }
}

pub struct SynthOutput {
    pub train_manifest: Manifest,
    pub test_manifest: Manifest,
    pub train_manifest_path: PathBuf,
    pub test_manifest_path: PathBuf,
    pub detections_path: PathBuf,
}

#[derive(Clone, Copy)]
enum Shape {
    Circle,
    Square,
    Triangle,
    Diamond,
}

const SHAPES: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Diamond];
const COLORS: [[u8; 3]; 4] = [
    [220, 40, 40],  // red
    [40, 200, 60],  // green
    [50, 90, 220],  // blue
    [230, 210, 40], // yellow
];

fn shape_of(class: usize) -> Shape {
    SHAPES[class / 4]
}

fn color_of(class: usize) -> [u8; 3] {
    COLORS[class % 4]
}

fn inside(shape: Shape, x: f64, y: f64, cx: f64, cy: f64, half: f64) -> bool {
    let dx = x - cx;
    let dy = y - cy;
    match shape {
        Shape::Circle => dx * dx + dy * dy <= half * half,
        Shape::Square => dx.abs() <= half && dy.abs() <= half,
        Shape::Triangle => {
            // Isoceles, apex up: width tapers linearly from base to apex.
            if dy < -half || dy > half {
                return false;
            }
            let frac = (dy + half) / (2.0 * half);
            dx.abs() <= half * frac
        }
        Shape::Diamond => dx.abs() + dy.abs() <= half,
    }
}

struct DrawnImage {
    image: Image,
    /// Tight shape bounds in pixels: (x, y, w, h).
    bounds: (f64, f64, f64, f64),
}

fn jitter_channel(rng: &mut ChaCha8Rng, base: u8, spread: f64) -> u8 {
    (base as f64 + uniform(rng, -spread, spread)).round().clamp(0.0, 255.0) as u8
}

/// Draws one sample: noisy gray background, a few desaturated distractor
/// rectangles, then the class shape in its class color with pixel jitter.
fn draw_sample(class: usize, size: u32, rng: &mut ChaCha8Rng) -> DrawnImage {
    let mut img = Image::filled(size, size, [0, 0, 0]);
    for y in 0..size {
        for x in 0..size {
            let g = uniform(rng, 90.0, 170.0) as u8;
            let tint = uniform(rng, -12.0, 12.0);
            img.set_pixel(
                x,
                y,
                [
                    (g as f64 + tint).clamp(0.0, 255.0) as u8,
                    g,
                    (g as f64 - tint).clamp(0.0, 255.0) as u8,
                ],
            );
        }
    }

    // Clutter: dull rectangles that a color-plus-shape rule must ignore.
    let distractors = 3 + (rng.next_u64() % 4) as usize;
    for _ in 0..distractors {
        let w = uniform(rng, 6.0, 18.0) as u32;
        let h = uniform(rng, 6.0, 18.0) as u32;
        let x0 = (rng.next_u64() % size as u64) as u32;
        let y0 = (rng.next_u64() % size as u64) as u32;
        let shade = [
            jitter_channel(rng, 120, 50.0),
            jitter_channel(rng, 120, 50.0),
            jitter_channel(rng, 120, 50.0),
        ];
        for y in y0..(y0 + h).min(size) {
            for x in x0..(x0 + w).min(size) {
                img.set_pixel(x, y, shade);
            }
        }
    }

    let shape = shape_of(class);
    let color = color_of(class);
    let half = uniform(rng, 0.16, 0.24) * size as f64;
    let cx = uniform(rng, half + 2.0, size as f64 - half - 2.0);
    let cy = uniform(rng, half + 2.0, size as f64 - half - 2.0);
    for y in 0..size {
        for x in 0..size {
            if inside(shape, x as f64 + 0.5, y as f64 + 0.5, cx, cy, half) {
                img.set_pixel(
                    x,
                    y,
                    [
                        jitter_channel(rng, color[0], 15.0),
                        jitter_channel(rng, color[1], 15.0),
                        jitter_channel(rng, color[2], 15.0),
                    ],
                );
            }
        }
    }

    DrawnImage {
        image: img,
        bounds: (cx - half, cy - half, 2.0 * half, 2.0 * half),
    }
}

/// The detector fixture row for a drawn shape: its bounds with small
/// positional jitter and a confident score, plus occasional clutter rows
/// (a "person" box, a sub-threshold "bird") that downstream filtering must
/// drop.
fn fixture_boxes(drawn: &DrawnImage, size: u32, rng: &mut ChaCha8Rng) -> Vec<BoundingBox> {
    let (bx, by, bw, bh) = drawn.bounds;
    let jx = uniform(rng, -2.0, 2.0);
    let jy = uniform(rng, -2.0, 2.0);
    let mut boxes = vec![BoundingBox {
        x: (bx + jx).max(0.0) as f32,
        y: (by + jy).max(0.0) as f32,
        w: bw as f32,
        h: bh as f32,
        score: uniform(rng, 0.7, 0.99) as f32,
        category: "bird".to_string(),
    }];
    if rng.next_u64() % 10 < 3 {
        boxes.push(BoundingBox {
            x: uniform(rng, 0.0, size as f64 * 0.5) as f32,
            y: uniform(rng, 0.0, size as f64 * 0.5) as f32,
            w: uniform(rng, 8.0, 30.0) as f32,
            h: uniform(rng, 8.0, 30.0) as f32,
            score: uniform(rng, 0.5, 0.9) as f32,
            category: "person".to_string(),
        });
    }
    if rng.next_u64() % 10 < 2 {
        boxes.push(BoundingBox {
            x: uniform(rng, 0.0, size as f64 * 0.6) as f32,
            y: uniform(rng, 0.0, size as f64 * 0.6) as f32,
            w: uniform(rng, 6.0, 20.0) as f32,
            h: uniform(rng, 6.0, 20.0) as f32,
            score: uniform(rng, 0.05, 0.4) as f32,
            category: "bird".to_string(),
        });
    }
    boxes
}

/// Generates the dataset under `dir`: `train/` and `test/` image trees,
/// `train.manifest` / `test.manifest`, and `detections.txt` covering every
/// train image and all but `boxless_test` test images.
pub fn generate(dir: &Path, config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    if config.train_per_class == 0 || config.test_per_class == 0 {
        return Err(SynthError::BadConfig("per-class counts must be >= 1".into()));
    }
    if config.image_size < 32 {
        return Err(SynthError::BadConfig(format!(
            "image_size {} below the 32-pixel floor",
            config.image_size
        )));
    }
    if config.boxless_test > config.test_per_class * NUM_SPECIES {
        return Err(SynthError::BadConfig(
            "boxless_test exceeds the number of test images".into(),
        ));
    }
    let train_dir = dir.join("train");
    let test_dir = dir.join("test");
    fs::create_dir_all(&train_dir)?;
    fs::create_dir_all(&test_dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut train_records = Vec::new();
    let mut test_records = Vec::new();
    let mut detections: BTreeMap<String, DetectionResult> = BTreeMap::new();

    for class in 0..NUM_SPECIES {
        let label = SpeciesLabel::from_index(class);
        for i in 0..config.train_per_class {
            let drawn = draw_sample(class, config.image_size, &mut rng);
            let id = format!("{}_{i:03}", label.code());
            let path = train_dir.join(format!("{id}.png"));
            drawn.image.save(&path)?;
            detections.insert(
                id.clone(),
                DetectionResult {
                    image_id: id.clone(),
                    boxes: fixture_boxes(&drawn, config.image_size, &mut rng),
                },
            );
            train_records.push(ImageRecord {
                id,
                path,
                label: Some(label),
                width: config.image_size,
                height: config.image_size,
                split: Split::Train,
                provenance: Provenance::Original,
            });
        }
    }

    // Boxless images are spread across classes: the flattened test index is
    // class-major, so stride by a prime-ish step.
    let total_test = config.test_per_class * NUM_SPECIES;
    let boxless: Vec<usize> = (0..config.boxless_test)
        .map(|k| (k * 37 + 5) % total_test)
        .collect();
    let mut flat_index = 0usize;
    for class in 0..NUM_SPECIES {
        let label = SpeciesLabel::from_index(class);
        for i in 0..config.test_per_class {
            let drawn = draw_sample(class, config.image_size, &mut rng);
            let id = format!("{}_t{i:02}", label.code());
            let path = test_dir.join(format!("{id}.png"));
            drawn.image.save(&path)?;
            let boxes = fixture_boxes(&drawn, config.image_size, &mut rng);
            if !boxless.contains(&flat_index) {
                detections.insert(id.clone(), DetectionResult { image_id: id.clone(), boxes });
            }
            test_records.push(ImageRecord {
                id,
                path,
                label: Some(label),
                width: config.image_size,
                height: config.image_size,
                split: Split::Test,
                provenance: Provenance::Original,
            });
            flat_index += 1;
        }
    }

    let train_manifest = Manifest::from_records(train_records)?;
    let test_manifest = Manifest::from_records(test_records)?;
    let train_manifest_path = dir.join("train.manifest");
    let test_manifest_path = dir.join("test.manifest");
    train_manifest.save(&train_manifest_path)?;
    test_manifest.save(&test_manifest_path)?;
    let detections_path = dir.join("detections.txt");
    save_fixture_detections(&detections, &detections_path)?;

    Ok(SynthOutput {
        train_manifest,
        test_manifest,
        train_manifest_path,
        test_manifest_path,
        detections_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::load_fixture_detections;

    fn small_config() -> SynthConfig {
        SynthConfig {
            train_per_class: 3,
            test_per_class: 2,
            boxless_test: 3,
            image_size: 64,
            seed: 5,
        }
    }

    #[test]
    fn generates_expected_counts_and_reloadable_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate(dir.path(), &small_config()).unwrap();
        assert_eq!(out.train_manifest.records().len(), 3 * NUM_SPECIES);
        assert_eq!(out.test_manifest.records().len(), 2 * NUM_SPECIES);
        for (_, n) in out.train_manifest.class_histogram() {
            assert_eq!(*n, 3);
        }
        let reloaded = Manifest::load(&out.train_manifest_path).unwrap();
        assert_eq!(reloaded.records().len(), 3 * NUM_SPECIES);
        assert!(reloaded.records().iter().all(|r| r.path.exists()));
    }

    #[test]
    fn fixture_covers_all_but_the_boxless_test_images() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_config();
        let out = generate(dir.path(), &config).unwrap();
        let by_id = load_fixture_detections(&out.detections_path).unwrap();
        for rec in out.train_manifest.records() {
            let det = by_id.get(rec.id.as_str()).expect("train image in fixture");
            assert!(
                det.boxes
                    .iter()
                    .any(|b| b.category == "bird" && b.score >= 0.5),
                "{} lacks a confident bird box",
                rec.id
            );
        }
        let missing = out
            .test_manifest
            .records()
            .iter()
            .filter(|r| !by_id.contains_key(r.id.as_str()))
            .count();
        assert_eq!(missing, config.boxless_test);
    }

    #[test]
    fn fixture_box_overlaps_the_drawn_shape() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate(dir.path(), &small_config()).unwrap();
        let by_id = load_fixture_detections(&out.detections_path).unwrap();
        for rec in out.train_manifest.records() {
            let class = rec.label.unwrap().index();
            let color = color_of(class);
            let img = rec.load_image().unwrap();
            // Tight bounds of pixels near the class color.
            let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let px = img.pixel(x, y);
                    let dist: i32 = px
                        .iter()
                        .zip(&color)
                        .map(|(a, b)| (*a as i32 - *b as i32).abs())
                        .sum();
                    if dist < 60 {
                        x0 = x0.min(x);
                        y0 = y0.min(y);
                        x1 = x1.max(x);
                        y1 = y1.max(y);
                    }
                }
            }
            assert!(x0 < x1 && y0 < y1, "{}: no shape pixels found", rec.id);
            let b = by_id[rec.id.as_str()]
                .boxes
                .iter()
                .find(|b| b.category == "bird" && b.score >= 0.5)
                .unwrap();
            // The confident box must cover the shape's center.
            let cx = (x0 + x1) as f32 / 2.0;
            let cy = (y0 + y1) as f32 / 2.0;
            assert!(
                b.x <= cx && cx <= b.x + b.w && b.y <= cy && cy <= b.y + b.h,
                "{}: box misses shape center",
                rec.id
            );
        }
    }

    #[test]
    fn same_seed_reproduces_identical_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let out_a = generate(dir_a.path(), &small_config()).unwrap();
        let out_b = generate(dir_b.path(), &small_config()).unwrap();
        let probe = &out_a.train_manifest.records()[7];
        let twin = &out_b.train_manifest.records()[7];
        assert_eq!(
            std::fs::read(&probe.path).unwrap(),
            std::fs::read(&twin.path).unwrap()
        );
        assert_eq!(
            std::fs::read(&out_a.detections_path).unwrap(),
            std::fs::read(&out_b.detections_path).unwrap()
        );
    }

    #[test]
    fn rejects_degenerate_configs() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config();
        c.train_per_class = 0;
        assert!(matches!(generate(dir.path(), &c), Err(SynthError::BadConfig(_))));
        let mut c = small_config();
        c.image_size = 16;
        assert!(generate(dir.path(), &c).is_err());
        let mut c = small_config();
        c.boxless_test = 1000;
        assert!(generate(dir.path(), &c).is_err());
    }
}
