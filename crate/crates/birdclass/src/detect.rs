//! Region-of-interest detection: a pluggable detector interface, a
//! replayable text-fixture backend, box filtering, and padded cropping.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::raster::Image;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("fixture file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("fixture {path} row {row}: {reason}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },
    #[error("detector backend failed on image {image_id}: {reason}")]
    Backend { image_id: String, reason: String },
    #[error("model file {0} does not exist")]
    MissingModel(PathBuf),
    #[error("model backend for {0} requires an external detector runtime, which this build does not bundle")]
    RuntimeUnavailable(PathBuf),
}

/// An axis-aligned detection in pixel coordinates with its confidence and
/// the detector's category name.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
    pub score: f32,
    pub category: String,
}

impl BoundingBox {
    /// Intersects the box with `[0, width) x [0, height)`, shrinking extents
    /// so the clamped box stays inside the image but never below 1 pixel.
    pub fn clamp_to(&self, width: u32, height: u32) -> BoundingBox {
        let max_x = (width.max(1) - 1) as f32;
        let max_y = (height.max(1) - 1) as f32;
        let x = self.x.clamp(0.0, max_x);
        let y = self.y.clamp(0.0, max_y);
        let w = (self.x + self.w).clamp(x + 1.0, width as f32) - x;
        let h = (self.y + self.h).clamp(y + 1.0, height as f32) - y;
        BoundingBox {
            x,
            y,
            w,
            h,
            score: self.score,
            category: self.category.clone(),
        }
    }
}

/// Bird boxes for one image, sorted by descending score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionResult {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
}

/// A detector. `raw_boxes` returns every candidate unfiltered; filtering
/// and sorting live in [`detect_birds`] so all backends share them.
pub trait DetectorBackend {
    fn raw_boxes(&self, image_id: &str, image: &Image) -> Result<Vec<BoundingBox>, DetectError>;

    /// Category name counted as a bird detection.
    fn bird_category(&self) -> &str {
        "bird"
    }
}

/// Replays detections recorded in a fixture file. Images absent from the
/// file yield zero boxes.
pub struct FixtureDetector {
    boxes: BTreeMap<String, Vec<BoundingBox>>,
    bird_category: String,
}

impl FixtureDetector {
    pub fn from_file(path: &Path) -> Result<Self, DetectError> {
        Ok(Self {
            boxes: parse_fixture(path)?,
            bird_category: "bird".to_string(),
        })
    }

    pub fn with_bird_category(mut self, category: &str) -> Self {
        self.bird_category = category.to_string();
        self
    }
}

impl DetectorBackend for FixtureDetector {
    fn raw_boxes(&self, image_id: &str, _image: &Image) -> Result<Vec<BoundingBox>, DetectError> {
        Ok(self.boxes.get(image_id).cloned().unwrap_or_default())
    }

    fn bird_category(&self) -> &str {
        &self.bird_category
    }
}

/// Stub for a serialized pretrained detector. Construction validates the
/// path; calling it reports that no external inference runtime is bundled.
pub struct ModelDetector {
    path: PathBuf,
}

impl ModelDetector {
    pub fn from_file(path: &Path) -> Result<Self, DetectError> {
        if !path.exists() {
            return Err(DetectError::MissingModel(path.to_path_buf()));
        }
        Ok(Self {
            path: path.to_path_buf(),
        })
    }
}

impl DetectorBackend for ModelDetector {
    fn raw_boxes(&self, _image_id: &str, _image: &Image) -> Result<Vec<BoundingBox>, DetectError> {
        Err(DetectError::RuntimeUnavailable(self.path.clone()))
    }
}

/// Runs the backend and keeps only bird-category boxes at or above
/// `score_threshold`, clamped to the image and sorted by descending score.
/// Ties sort by input order (the sort is stable).
pub fn detect_birds(
    image_id: &str,
    image: &Image,
    backend: &dyn DetectorBackend,
    score_threshold: f32,
) -> Result<DetectionResult, DetectError> {
    let raw = backend
        .raw_boxes(image_id, image)
        .map_err(|e| match e {
            DetectError::Backend { .. } => e,
            other => DetectError::Backend {
                image_id: image_id.to_string(),
                reason: other.to_string(),
            },
        })?;
    let mut boxes: Vec<BoundingBox> = raw
        .into_iter()
        .filter(|b| b.category == backend.bird_category() && b.score >= score_threshold)
        .map(|b| b.clamp_to(image.width(), image.height()))
        .collect();
    boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(DetectionResult {
        image_id: image_id.to_string(),
        boxes,
    })
}

/// Crops one image per box, each side expanded by `pad_fraction` of the
/// box's extent and then clamped to the image. Crop order matches box order.
pub fn crop_rois(image: &Image, result: &DetectionResult, pad_fraction: f32) -> Vec<Image> {
    result
        .boxes
        .iter()
        .map(|b| {
            let pad_x = b.w * pad_fraction;
            let pad_y = b.h * pad_fraction;
            let x0 = (b.x - pad_x).floor().max(0.0) as u32;
            let y0 = (b.y - pad_y).floor().max(0.0) as u32;
            let x1 = ((b.x + b.w + pad_x).ceil() as u32).min(image.width());
            let y1 = ((b.y + b.h + pad_y).ceil() as u32).min(image.height());
            image.crop(x0, y0, (x1 - x0).max(1), (y1 - y0).max(1))
        })
        .collect()
}

fn parse_fixture(path: &Path) -> Result<BTreeMap<String, Vec<BoundingBox>>, DetectError> {
    let text = fs::read_to_string(path).map_err(|source| DetectError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut map: BTreeMap<String, Vec<BoundingBox>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| DetectError::MalformedRow {
            path: path.to_path_buf(),
            row,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", fields.len())));
        }
        let num = |s: &str, name: &str| -> Result<f32, DetectError> {
            s.parse::<f32>()
                .map_err(|_| bad(format!("{name} {s:?} is not a number")))
        };
        let b = BoundingBox {
            x: num(fields[1], "x")?,
            y: num(fields[2], "y")?,
            w: num(fields[3], "w")?,
            h: num(fields[4], "h")?,
            score: num(fields[5], "score")?,
            category: fields[6].to_string(),
        };
        if b.w < 1.0 || b.h < 1.0 {
            return Err(bad(format!("extents {}x{} below 1", b.w, b.h)));
        }
        if !(0.0..=1.0).contains(&b.score) {
            return Err(bad(format!("score {} outside [0, 1]", b.score)));
        }
        map.entry(fields[0].to_string()).or_default().push(b);
    }
    Ok(map)
}

/// Parses a fixture file into per-image results sorted by descending score.
pub fn load_fixture_detections(
    path: &Path,
) -> Result<BTreeMap<String, DetectionResult>, DetectError> {
    Ok(parse_fixture(path)?
        .into_iter()
        .map(|(image_id, mut boxes)| {
            boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
            let result = DetectionResult {
                image_id: image_id.clone(),
                boxes,
            };
            (image_id, result)
        })
        .collect())
}

/// Writes per-image results in the fixture format, so detection output can
/// be replayed as input. Images iterate in map order; an image with zero
/// boxes contributes no rows.
pub fn save_fixture_detections(
    results: &BTreeMap<String, DetectionResult>,
    path: &Path,
) -> Result<(), DetectError> {
    let mut out = String::new();
    for result in results.values() {
        for b in &result.boxes {
            out.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                result.image_id, b.x, b.y, b.w, b.h, b.score, b.category
            ));
        }
    }
    fs::write(path, out).map_err(|source| DetectError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct CannedDetector(Vec<BoundingBox>);

    impl DetectorBackend for CannedDetector {
        fn raw_boxes(&self, _id: &str, _img: &Image) -> Result<Vec<BoundingBox>, DetectError> {
            Ok(self.0.clone())
        }
    }

    fn bx(x: f32, y: f32, w: f32, h: f32, score: f32, category: &str) -> BoundingBox {
        BoundingBox {
            x,
            y,
            w,
            h,
            score,
            category: category.to_string(),
        }
    }

    #[test]
    fn empty_backend_gives_empty_result() {
        let img = Image::filled(10, 10, [0, 0, 0]);
        let r = detect_birds("a", &img, &CannedDetector(vec![]), 0.5).unwrap();
        assert_eq!(r.image_id, "a");
        assert!(r.boxes.is_empty());
    }

    #[test]
    fn filter_keeps_only_confident_birds() {
        let img = Image::filled(100, 100, [0, 0, 0]);
        let backend = CannedDetector(vec![
            bx(1.0, 1.0, 10.0, 10.0, 0.95, "bird"),
            bx(2.0, 2.0, 10.0, 10.0, 0.99, "person"),
            bx(3.0, 3.0, 10.0, 10.0, 0.40, "bird"),
        ]);
        let r = detect_birds("a", &img, &backend, 0.5).unwrap();
        assert_eq!(r.boxes.len(), 1);
        assert_eq!(r.boxes[0].score, 0.95);
        assert_eq!(r.boxes[0].category, "bird");
    }

    #[test]
    fn detect_sorts_by_descending_score() {
        let img = Image::filled(50, 50, [0, 0, 0]);
        let backend = CannedDetector(vec![
            bx(0.0, 0.0, 5.0, 5.0, 0.6, "bird"),
            bx(0.0, 0.0, 5.0, 5.0, 0.9, "bird"),
            bx(0.0, 0.0, 5.0, 5.0, 0.75, "bird"),
        ]);
        let r = detect_birds("a", &img, &backend, 0.0).unwrap();
        let scores: Vec<f32> = r.boxes.iter().map(|b| b.score).collect();
        assert_eq!(scores, vec![0.9, 0.75, 0.6]);
    }

    #[test]
    fn detect_clamps_overhanging_boxes() {
        let img = Image::filled(20, 20, [0, 0, 0]);
        let backend = CannedDetector(vec![bx(-5.0, 15.0, 10.0, 10.0, 0.8, "bird")]);
        let r = detect_birds("a", &img, &backend, 0.5).unwrap();
        let b = &r.boxes[0];
        assert!(b.x >= 0.0 && b.y >= 0.0);
        assert!(b.x + b.w <= 20.0);
        assert!(b.y + b.h <= 20.0);
        assert!(b.w >= 1.0 && b.h >= 1.0);
    }

    #[test]
    fn fixture_roundtrip_matches_independent_parse() {
        // Oracle: parse the fixture text by hand here and compare with the
        // loader, including its sorting.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boxes.txt");
        let text = "\
img1 12 8 30 40 0.9 bird
img2 0 0 5 5 0.4 bird
img1 1 1 10 10 0.7 person
img2 2 2 8 8 0.9 bird
img2 3 3 6 6 0.7 bird
";
        std::fs::write(&path, text).unwrap();
        let map = load_fixture_detections(&path).unwrap();
        assert_eq!(map.len(), 2);

        let mut expected: BTreeMap<String, Vec<(f32, f32, f32, f32, f32, String)>> =
            BTreeMap::new();
        for line in text.lines() {
            let f: Vec<&str> = line.split_whitespace().collect();
            expected.entry(f[0].to_string()).or_default().push((
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
                f[4].parse().unwrap(),
                f[5].parse().unwrap(),
                f[6].to_string(),
            ));
        }
        for rows in expected.values_mut() {
            rows.sort_by(|a, b| b.4.total_cmp(&a.4));
        }
        for (id, rows) in &expected {
            let got = &map[id].boxes;
            assert_eq!(got.len(), rows.len());
            for (g, e) in got.iter().zip(rows) {
                assert_eq!((g.x, g.y, g.w, g.h, g.score, g.category.as_str()),
                           (e.0, e.1, e.2, e.3, e.4, e.5.as_str()));
            }
        }
        // img2's three rows arrive 0.4, 0.9, 0.7 and come out 0.9, 0.7, 0.4.
        let img2: Vec<f32> = map["img2"].boxes.iter().map(|b| b.score).collect();
        assert_eq!(img2, vec![0.9, 0.7, 0.4]);
    }

    #[test]
    fn empty_fixture_gives_empty_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.txt");
        std::fs::write(&path, "").unwrap();
        assert!(load_fixture_detections(&path).unwrap().is_empty());
    }

    #[test]
    fn fixture_rejects_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        for bad in ["img1 1 2 3", "img1 a 2 3 4 0.5 bird", "img1 1 2 0 4 0.5 bird",
                    "img1 1 2 3 4 1.5 bird"] {
            std::fs::write(&path, bad).unwrap();
            assert!(
                matches!(
                    load_fixture_detections(&path),
                    Err(DetectError::MalformedRow { row: 1, .. })
                ),
                "accepted {bad:?}"
            );
        }
    }

    #[test]
    fn fixture_save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boxes.txt");
        std::fs::write(&path, "a 1 2 3 4 0.5 bird\nb 5 6 7 8 0.25 bird\n").unwrap();
        let map = load_fixture_detections(&path).unwrap();
        let copy = dir.path().join("copy.txt");
        save_fixture_detections(&map, &copy).unwrap();
        assert_eq!(load_fixture_detections(&copy).unwrap(), map);
    }

    #[test]
    fn model_backend_requires_existing_file_then_reports_no_runtime() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.bin");
        assert!(matches!(
            ModelDetector::from_file(&missing),
            Err(DetectError::MissingModel(_))
        ));
        let present = dir.path().join("model.bin");
        std::fs::write(&present, b"weights").unwrap();
        let det = ModelDetector::from_file(&present).unwrap();
        let img = Image::filled(4, 4, [0, 0, 0]);
        let err = detect_birds("imgX", &img, &det, 0.5).unwrap_err();
        match err {
            DetectError::Backend { image_id, reason } => {
                assert_eq!(image_id, "imgX");
                assert!(reason.contains("runtime"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn full_image_box_crops_identically() {
        let mut img = Image::filled(16, 12, [0, 0, 0]);
        img.set_pixel(3, 7, [9, 8, 7]);
        let result = DetectionResult {
            image_id: "a".into(),
            boxes: vec![bx(0.0, 0.0, 16.0, 12.0, 0.9, "bird")],
        };
        let crops = crop_rois(&img, &result, 0.0);
        assert_eq!(crops.len(), 1);
        assert_eq!(crops[0], img);
    }

    #[test]
    fn pad_expands_then_clamps() {
        // 20x20 box at (10,10) in a 100x100 image, pad 0.5: 10px each side,
        // clamped at the low edge, so the crop spans 0..40 in both axes.
        let img = Image::filled(100, 100, [0, 0, 0]);
        let result = DetectionResult {
            image_id: "a".into(),
            boxes: vec![bx(10.0, 10.0, 20.0, 20.0, 0.9, "bird")],
        };
        let crops = crop_rois(&img, &result, 0.5);
        assert_eq!((crops[0].width(), crops[0].height()), (40, 40));
    }

    #[test]
    fn empty_result_gives_no_crops() {
        let img = Image::filled(10, 10, [0, 0, 0]);
        let result = DetectionResult::default();
        assert!(crop_rois(&img, &result, 0.5).is_empty());
    }

    #[test]
    fn crop_order_matches_box_order() {
        let mut img = Image::filled(30, 10, [0, 0, 0]);
        img.set_pixel(2, 2, [1, 1, 1]);
        img.set_pixel(22, 2, [2, 2, 2]);
        let result = DetectionResult {
            image_id: "a".into(),
            boxes: vec![
                bx(20.0, 0.0, 10.0, 10.0, 0.9, "bird"),
                bx(0.0, 0.0, 10.0, 10.0, 0.8, "bird"),
            ],
        };
        let crops = crop_rois(&img, &result, 0.0);
        assert_eq!(crops[0].pixel(2, 2), [2, 2, 2]);
        assert_eq!(crops[1].pixel(2, 2), [1, 1, 1]);
    }

    proptest! {
        #[test]
        fn filter_soundness_over_random_outputs(
            raw in proptest::collection::vec(
                (0.0f32..60.0, 0.0f32..60.0, 1.0f32..40.0, 1.0f32..40.0,
                 0.0f32..=1.0, prop_oneof!["bird".prop_map(String::from),
                                           "person".prop_map(String::from),
                                           "kite".prop_map(String::from)]),
                0..20
            ),
            threshold in 0.0f32..=1.0
        ) {
            let img = Image::filled(64, 64, [0, 0, 0]);
            let backend = CannedDetector(
                raw.iter()
                    .map(|(x, y, w, h, s, c)| bx(*x, *y, *w, *h, *s, c))
                    .collect(),
            );
            let r = detect_birds("p", &img, &backend, threshold).unwrap();
            let expected = raw
                .iter()
                .filter(|(_, _, _, _, s, c)| c == "bird" && *s >= threshold)
                .count();
            prop_assert_eq!(r.boxes.len(), expected);
            for b in &r.boxes {
                prop_assert_eq!(b.category.as_str(), "bird");
                prop_assert!(b.score >= threshold);
                prop_assert!(b.x >= 0.0 && b.y >= 0.0);
                prop_assert!(b.x + b.w <= 64.0 && b.y + b.h <= 64.0);
                prop_assert!(b.w >= 1.0 && b.h >= 1.0);
            }
            for win in r.boxes.windows(2) {
                prop_assert!(win[0].score >= win[1].score);
            }
            // Crops from any filtered result stay within bounds.
            let crops = crop_rois(&img, &r, 0.25);
            prop_assert_eq!(crops.len(), r.boxes.len());
            for c in &crops {
                prop_assert!(c.width() <= 64 && c.height() <= 64);
            }
        }
    }
}
