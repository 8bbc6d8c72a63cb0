//! Max-confidence fusion. Every model scores every detector crop (or the
//! whole image when the detector found nothing), and the single highest
//! class probability across all of those vectors decides the label. Exact
//! ties resolve by lower class index, then lower crop index, then
//! lexicographically smaller model id, so output never depends on
//! candidate order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{SpeciesLabel, NUM_SPECIES};
use crate::detect::DetectionResult;
use crate::raster::Image;
use crate::train::{predict, BackboneHandle, PredictionVector};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("image {0}: no candidates to fuse")]
    NoCandidates(String),
    #[error("no models supplied")]
    NoModels,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} row {row}: {reason}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },
}

/// One model's class distribution for one input view. `crop_index` is the
/// ROI position in detection order, or -1 for the whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub model_id: String,
    pub crop_index: i32,
    pub vector: PredictionVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub image_id: String,
    pub label: SpeciesLabel,
    pub confidence: f64,
    pub source_model: String,
    pub source_crop: i32,
    pub fallback_used: bool,
}

/// Picks the globally maximal (candidate, class) probability. Tie order:
/// class index, then crop index, then model id.
pub fn fuse(
    image_id: &str,
    candidates: &[ScoredCandidate],
) -> Result<EnsemblePrediction, EnsembleError> {
    let mut best: Option<(f64, usize, &ScoredCandidate)> = None;
    for cand in candidates {
        for (class, &p) in cand.vector.probs.iter().enumerate() {
            let challenger_wins = match &best {
                None => true,
                Some((bp, bclass, bcand)) => {
                    p > *bp
                        || (p == *bp
                            && (class, cand.crop_index, cand.model_id.as_str())
                                < (*bclass, bcand.crop_index, bcand.model_id.as_str()))
                }
            };
            if challenger_wins {
                best = Some((p, class, cand));
            }
        }
    }
    let (confidence, class, winner) =
        best.ok_or_else(|| EnsembleError::NoCandidates(image_id.to_string()))?;
    Ok(EnsemblePrediction {
        image_id: image_id.to_string(),
        label: SpeciesLabel::from_index(class),
        confidence,
        source_model: winner.model_id.clone(),
        source_crop: winner.crop_index,
        fallback_used: winner.crop_index == -1,
    })
}

/// Two-case inference for one image: with detections, every model scores
/// every padded crop; with none, every model scores the whole image and the
/// result is marked as a fallback.
pub fn predict_image(
    image: &Image,
    image_id: &str,
    models: &[BackboneHandle],
    detections: &DetectionResult,
    resolution: u32,
    pad_fraction: f32,
) -> Result<EnsemblePrediction, EnsembleError> {
    if models.is_empty() {
        return Err(EnsembleError::NoModels);
    }
    let mut candidates = Vec::new();
    if detections.boxes.is_empty() {
        for model in models {
            candidates.push(ScoredCandidate {
                model_id: model.model_id.clone(),
                crop_index: -1,
                vector: predict(model, image, resolution),
            });
        }
    } else {
        let crops = crate::detect::crop_rois(image, detections, pad_fraction);
        for (crop_index, crop) in crops.iter().enumerate() {
            for model in models {
                candidates.push(ScoredCandidate {
                    model_id: model.model_id.clone(),
                    crop_index: crop_index as i32,
                    vector: predict(model, crop, resolution),
                });
            }
        }
    }
    fuse(image_id, &candidates)
}

/// Writes one `image_id code confidence fallback model crop` row per
/// prediction. Confidence uses the shortest round-trip float form, so equal
/// runs produce byte-identical files.
pub fn save_predictions(
    predictions: &[EnsemblePrediction],
    path: &Path,
) -> Result<(), EnsembleError> {
    let io_err = |source| EnsembleError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for p in predictions {
        writeln!(
            w,
            "{} {} {} {} {} {}",
            p.image_id,
            p.label.code(),
            p.confidence,
            u8::from(p.fallback_used),
            p.source_model,
            p.source_crop,
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_predictions(path: &Path) -> Result<Vec<EnsemblePrediction>, EnsembleError> {
    let text = fs::read_to_string(path).map_err(|source| EnsembleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |row: usize, reason: String| EnsembleError::MalformedRow {
        path: path.to_path_buf(),
        row,
        reason,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad(row, format!("expected 6 fields, found {}", fields.len())));
        }
        let label = SpeciesLabel::from_code(fields[1])
            .map_err(|_| bad(row, format!("unknown species code {:?}", fields[1])))?;
        let confidence: f64 = fields[2]
            .parse()
            .map_err(|_| bad(row, format!("bad confidence {:?}", fields[2])))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(bad(row, format!("confidence {confidence} outside [0,1]")));
        }
        let fallback_used = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(bad(row, format!("bad fallback flag {other:?}"))),
        };
        let source_crop: i32 = fields[5]
            .parse()
            .map_err(|_| bad(row, format!("bad crop index {:?}", fields[5])))?;
        if source_crop < -1 {
            return Err(bad(row, format!("crop index {source_crop} below -1")));
        }
        if fallback_used != (source_crop == -1) {
            return Err(bad(row, "fallback flag disagrees with crop index".into()));
        }
        out.push(EnsemblePrediction {
            image_id: fields[0].to_string(),
            label,
            confidence,
            source_model: fields[4].to_string(),
            source_crop,
            fallback_used,
        });
    }
    Ok(out)
}

/// Brute-force reference: sort every (probability, class, crop, model)
/// entry and take the top one. Kept public for the acceptance suite.
pub fn fuse_by_exhaustive_scan(
    image_id: &str,
    candidates: &[ScoredCandidate],
) -> Result<EnsemblePrediction, EnsembleError> {
    let mut entries: Vec<(f64, usize, i32, &str)> = Vec::new();
    for cand in candidates {
        for class in 0..NUM_SPECIES {
            entries.push((
                cand.vector.probs[class],
                class,
                cand.crop_index,
                cand.model_id.as_str(),
            ));
        }
    }
    entries.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(b.3))
    });
    let (confidence, class, crop, model) = *entries
        .first()
        .ok_or_else(|| EnsembleError::NoCandidates(image_id.to_string()))?;
    Ok(EnsemblePrediction {
        image_id: image_id.to_string(),
        label: SpeciesLabel::from_index(class),
        confidence,
        source_model: model.to_string(),
        source_crop: crop,
        fallback_used: crop == -1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::BoundingBox;
    use crate::rng::{shuffle, uniform};
    use crate::train::{build_backbone, BackboneKind, InitSpec};
    use proptest::prelude::*;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vector_with(peak_class: usize, peak: f64) -> PredictionVector {
        let rest = (1.0 - peak) / (NUM_SPECIES - 1) as f64;
        let mut probs = [rest; NUM_SPECIES];
        probs[peak_class] = peak;
        PredictionVector { probs }
    }

    fn candidate(model_id: &str, crop_index: i32, peak_class: usize, peak: f64) -> ScoredCandidate {
        ScoredCandidate {
            model_id: model_id.to_string(),
            crop_index,
            vector: vector_with(peak_class, peak),
        }
    }

    fn random_candidates(rng: &mut ChaCha8Rng, n: usize) -> Vec<ScoredCandidate> {
        let models = ["m_alpha", "m_beta", "m_gamma"];
        (0..n)
            .map(|_| {
                let mut probs = [0.0f64; NUM_SPECIES];
                let mut sum = 0.0;
                for p in &mut probs {
                    *p = uniform(rng, 0.0, 1.0);
                    sum += *p;
                }
                for p in &mut probs {
                    *p /= sum;
                }
                ScoredCandidate {
                    model_id: models[(rng.next_u64() % 3) as usize].to_string(),
                    crop_index: (rng.next_u64() % 5) as i32 - 1,
                    vector: PredictionVector { probs },
                }
            })
            .collect()
    }

    #[test]
    fn higher_peak_wins() {
        let cands = vec![
            candidate("m_a", 0, 3, 0.9),
            candidate("m_b", 1, 5, 0.7),
        ];
        let p = fuse("img", &cands).unwrap();
        assert_eq!(p.label.index(), 3);
        assert_eq!(p.confidence, 0.9);
        assert_eq!(p.source_model, "m_a");
        assert_eq!(p.source_crop, 0);
        assert!(!p.fallback_used);
    }

    #[test]
    fn single_candidate_returns_its_argmax() {
        let cands = vec![candidate("m_a", -1, 11, 0.6)];
        let p = fuse("img", &cands).unwrap();
        assert_eq!(p.label.index(), 11);
        assert_eq!(p.confidence, 0.6);
        assert!(p.fallback_used);
    }

    #[test]
    fn empty_candidate_list_is_an_error() {
        assert!(matches!(
            fuse("img", &[]),
            Err(EnsembleError::NoCandidates(id)) if id == "img"
        ));
    }

    #[test]
    fn ties_break_by_class_then_crop_then_model() {
        // Same peak probability at two classes: lower class index wins.
        let cands = vec![candidate("m_a", 0, 7, 0.5), candidate("m_b", 1, 2, 0.5)];
        assert_eq!(fuse("img", &cands).unwrap().label.index(), 2);

        // Same class and probability, different crops: lower crop wins.
        let cands = vec![candidate("m_a", 3, 4, 0.5), candidate("m_a", 1, 4, 0.5)];
        assert_eq!(fuse("img", &cands).unwrap().source_crop, 1);

        // Same class, probability, and crop: smaller model id wins.
        let cands = vec![candidate("m_b", 2, 4, 0.5), candidate("m_a", 2, 4, 0.5)];
        assert_eq!(fuse("img", &cands).unwrap().source_model, "m_a");
    }

    #[test]
    fn matches_exhaustive_scan_on_random_sets_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..1200 {
            let n = 1 + (rng.next_u64() % 8) as usize;
            let mut cands = random_candidates(&mut rng, n);
            // Every third trial, clone an existing peak into another slot to
            // force an exact tie.
            if trial % 3 == 0 && n >= 2 {
                let peak = cands[0]
                    .vector
                    .probs
                    .iter()
                    .cloned()
                    .fold(f64::MIN, f64::max);
                let class = (rng.next_u64() % NUM_SPECIES as u64) as usize;
                cands[1].vector.probs[class] = peak;
            }
            let fast = fuse("t", &cands).unwrap();
            let slow = fuse_by_exhaustive_scan("t", &cands).unwrap();
            assert_eq!(fast, slow, "trial {trial}");
        }
    }

    #[test]
    fn shuffling_candidates_never_changes_the_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..200 {
            let mut cands = random_candidates(&mut rng, 6);
            let before = fuse("t", &cands).unwrap();
            shuffle(&mut rng, &mut cands);
            assert_eq!(fuse("t", &cands).unwrap(), before);
        }
    }

    #[test]
    fn common_positive_scaling_keeps_the_winner() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let cands = random_candidates(&mut rng, 5);
            let before = fuse("t", &cands).unwrap();
            let scaled: Vec<ScoredCandidate> = cands
                .iter()
                .map(|c| {
                    let mut c = c.clone();
                    for p in &mut c.vector.probs {
                        *p *= 0.25;
                    }
                    c
                })
                .collect();
            let after = fuse("t", &scaled).unwrap();
            assert_eq!(after.label, before.label);
            assert_eq!(after.source_model, before.source_model);
            assert_eq!(after.source_crop, before.source_crop);
        }
    }

    proptest! {
        #[test]
        fn union_fuse_takes_the_higher_confidence(seed_a in 0u64..10_000, seed_b in 0u64..10_000) {
            let mut rng_a = ChaCha8Rng::seed_from_u64(seed_a);
            let mut rng_b = ChaCha8Rng::seed_from_u64(seed_b ^ 0xdead_beef);
            let list_a = random_candidates(&mut rng_a, 1 + (seed_a % 4) as usize);
            let list_b = random_candidates(&mut rng_b, 1 + (seed_b % 4) as usize);
            let fused_a = fuse("t", &list_a).unwrap();
            let fused_b = fuse("t", &list_b).unwrap();
            let mut union = list_a.clone();
            union.extend(list_b.clone());
            let fused_union = fuse("t", &union).unwrap();
            prop_assert_eq!(
                fused_union.confidence,
                fused_a.confidence.max(fused_b.confidence)
            );
            if fused_a.confidence != fused_b.confidence {
                let expected = if fused_a.confidence > fused_b.confidence { &fused_a } else { &fused_b };
                prop_assert_eq!(&fused_union, expected);
            }
        }
    }

    fn test_models() -> Vec<BackboneHandle> {
        vec![
            build_backbone(BackboneKind::ReferenceCnn, &InitSpec::Fresh, None, 21)
                .unwrap()
                .with_model_id("net_a"),
            build_backbone(BackboneKind::ReferenceCnn, &InitSpec::Fresh, None, 22)
                .unwrap()
                .with_model_id("net_b"),
        ]
    }

    fn textured_image() -> Image {
        let mut img = Image::filled(64, 48, [90, 120, 60]);
        for y in 0..48u32 {
            for x in 0..64u32 {
                if (x / 8 + y / 8) % 2 == 0 {
                    img.set_pixel(x, y, [200, 80, (x * 3) as u8]);
                }
            }
        }
        img
    }

    #[test]
    fn zero_boxes_forces_fallback() {
        let models = test_models();
        let img = textured_image();
        let det = DetectionResult {
            image_id: "img9".into(),
            boxes: vec![],
        };
        let p = predict_image(&img, "img9", &models, &det, 32, 0.1).unwrap();
        assert!(p.fallback_used);
        assert_eq!(p.source_crop, -1);
        assert_eq!(p.image_id, "img9");
    }

    #[test]
    fn full_frame_box_with_zero_pad_matches_fallback_label() {
        let models = test_models();
        let img = textured_image();
        let covering = DetectionResult {
            image_id: "img".into(),
            boxes: vec![BoundingBox {
                x: 0.0,
                y: 0.0,
                w: img.width() as f32,
                h: img.height() as f32,
                score: 0.9,
                category: "bird".into(),
            }],
        };
        let empty = DetectionResult {
            image_id: "img".into(),
            boxes: vec![],
        };
        let boxed = predict_image(&img, "img", &models, &covering, 32, 0.0).unwrap();
        let whole = predict_image(&img, "img", &models, &empty, 32, 0.0).unwrap();
        assert_eq!(boxed.label, whole.label);
        assert_eq!(boxed.confidence, whole.confidence);
        assert!(!boxed.fallback_used);
        assert!(whole.fallback_used);
    }

    #[test]
    fn three_boxes_two_models_equals_direct_six_way_scan() {
        let models = test_models();
        let img = textured_image();
        let boxes = vec![
            BoundingBox { x: 2.0, y: 2.0, w: 20.0, h: 18.0, score: 0.9, category: "bird".into() },
            BoundingBox { x: 30.0, y: 10.0, w: 25.0, h: 30.0, score: 0.8, category: "bird".into() },
            BoundingBox { x: 10.0, y: 20.0, w: 40.0, h: 20.0, score: 0.7, category: "bird".into() },
        ];
        let det = DetectionResult {
            image_id: "img".into(),
            boxes,
        };
        let fused = predict_image(&img, "img", &models, &det, 32, 0.1).unwrap();

        // Recompute the six candidate vectors independently.
        let crops = crate::detect::crop_rois(&img, &det, 0.1);
        assert_eq!(crops.len(), 3);
        let mut cands = Vec::new();
        for (ci, crop) in crops.iter().enumerate() {
            for model in &models {
                cands.push(ScoredCandidate {
                    model_id: model.model_id.clone(),
                    crop_index: ci as i32,
                    vector: predict(model, crop, 32),
                });
            }
        }
        assert_eq!(cands.len(), 6);
        assert_eq!(fused, fuse_by_exhaustive_scan("img", &cands).unwrap());
    }

    #[test]
    fn no_models_is_an_error() {
        let img = textured_image();
        let det = DetectionResult {
            image_id: "img".into(),
            boxes: vec![],
        };
        assert!(matches!(
            predict_image(&img, "img", &[], &det, 32, 0.1),
            Err(EnsembleError::NoModels)
        ));
    }

    #[test]
    fn prediction_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.txt");
        let preds = vec![
            EnsemblePrediction {
                image_id: "a_1".into(),
                label: SpeciesLabel::from_index(0),
                confidence: 0.8125,
                source_model: "net_a".into(),
                source_crop: 2,
                fallback_used: false,
            },
            EnsemblePrediction {
                image_id: "b_2".into(),
                label: SpeciesLabel::from_index(15),
                confidence: 0.062_537_219_815,
                source_model: "net_b".into(),
                source_crop: -1,
                fallback_used: true,
            },
        ];
        save_predictions(&preds, &path).unwrap();
        assert_eq!(load_predictions(&path).unwrap(), preds);

        // Saving again yields identical bytes.
        let first = std::fs::read(&path).unwrap();
        save_predictions(&preds, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn prediction_file_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.txt");
        for bad in [
            "a blasti 0.5 0 net_a",                // five fields
            "a nosuch 0.5 0 net_a 0",              // unknown code
            "a blasti 1.5 0 net_a 0",              // confidence out of range
            "a blasti 0.5 2 net_a 0",              // bad flag
            "a blasti 0.5 0 net_a -1",             // flag says no fallback, crop says whole image
            "a blasti 0.5 1 net_a 3",              // flag says fallback, crop is a real ROI
        ] {
            std::fs::write(&path, format!("{bad}\n")).unwrap();
            assert!(
                matches!(load_predictions(&path), Err(EnsembleError::MalformedRow { .. })),
                "accepted {bad:?}"
            );
        }
    }
}
