//! Per-species augmentation: nine techniques, a fixed per-class policy
//! table, and deterministic class expansion to each class's target count.

mod transforms;

pub use transforms::{
    add, affine, contrast, flip_horizontal, gaussian_blur, gaussian_noise, hue_shift, multiply,
    sharp,
};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{ImageRecord, Manifest, Provenance, SpeciesLabel};
use crate::raster::Image;
use crate::rng::uniform;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("{technique} parameter out of range: {reason}")]
    ParamOutOfRange {
        technique: TechniqueKind,
        reason: String,
    },
    #[error("class {species}: target {target} is below the {originals} original records")]
    TargetTooSmall {
        species: SpeciesLabel,
        originals: usize,
        target: usize,
    },
    #[error("expand_class for {expected} got a record labeled {found:?}")]
    MixedSpecies {
        expected: SpeciesLabel,
        found: Option<SpeciesLabel>,
    },
    #[error("expand_class needs at least one record")]
    EmptyClass,
    #[error("no policy for species {0}")]
    MissingPolicy(SpeciesLabel),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// The nine technique names, in policy-table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TechniqueKind {
    GaussianNoise,
    GaussianBlur,
    Flip,
    Contrast,
    Hue,
    Add,
    Multiply,
    Sharp,
    Affine,
}

impl TechniqueKind {
    pub const ALL: [TechniqueKind; 9] = [
        TechniqueKind::GaussianNoise,
        TechniqueKind::GaussianBlur,
        TechniqueKind::Flip,
        TechniqueKind::Contrast,
        TechniqueKind::Hue,
        TechniqueKind::Add,
        TechniqueKind::Multiply,
        TechniqueKind::Sharp,
        TechniqueKind::Affine,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TechniqueKind::GaussianNoise => "gaussian_noise",
            TechniqueKind::GaussianBlur => "gaussian_blur",
            TechniqueKind::Flip => "flip",
            TechniqueKind::Contrast => "contrast",
            TechniqueKind::Hue => "hue",
            TechniqueKind::Add => "add",
            TechniqueKind::Multiply => "multiply",
            TechniqueKind::Sharp => "sharp",
            TechniqueKind::Affine => "affine",
        }
    }
}

impl fmt::Display for TechniqueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A technique with concrete parameters. Construct directly for full
/// control, or draw parameters from the default ranges with
/// [`sample_technique`].
#[derive(Debug, Clone, PartialEq)]
pub enum Technique {
    GaussianNoise { sigma: f64 },
    GaussianBlur { sigma: f64 },
    Flip,
    Contrast { factor: f64 },
    Hue { degrees: f64 },
    Add { values: [i16; 3] },
    Multiply { factors: [f64; 3] },
    Sharp { amount: f64 },
    Affine {
        rotation_deg: f64,
        scale: f64,
        translate_frac: [f64; 2],
    },
}

impl Technique {
    pub fn kind(&self) -> TechniqueKind {
        match self {
            Technique::GaussianNoise { .. } => TechniqueKind::GaussianNoise,
            Technique::GaussianBlur { .. } => TechniqueKind::GaussianBlur,
            Technique::Flip => TechniqueKind::Flip,
            Technique::Contrast { .. } => TechniqueKind::Contrast,
            Technique::Hue { .. } => TechniqueKind::Hue,
            Technique::Add { .. } => TechniqueKind::Add,
            Technique::Multiply { .. } => TechniqueKind::Multiply,
            Technique::Sharp { .. } => TechniqueKind::Sharp,
            Technique::Affine { .. } => TechniqueKind::Affine,
        }
    }
}

/// Default sampling ranges, one row per technique:
/// noise sigma [5, 25]; blur sigma [0.5, 2.0]; contrast factor [0.6, 1.4];
/// hue [-18, +18] degrees; add [-40, +40] per channel; multiply [0.7, 1.3]
/// per channel; sharp amount [0.5, 1.5]; affine rotation [-20, +20] degrees,
/// scale [0.85, 1.15], translation [-8%, +8%] per axis.
pub fn sample_technique(kind: TechniqueKind, rng: &mut ChaCha8Rng) -> Technique {
    match kind {
        TechniqueKind::GaussianNoise => Technique::GaussianNoise {
            sigma: uniform(rng, 5.0, 25.0),
        },
        TechniqueKind::GaussianBlur => Technique::GaussianBlur {
            sigma: uniform(rng, 0.5, 2.0),
        },
        TechniqueKind::Flip => Technique::Flip,
        TechniqueKind::Contrast => Technique::Contrast {
            factor: uniform(rng, 0.6, 1.4),
        },
        TechniqueKind::Hue => Technique::Hue {
            degrees: uniform(rng, -18.0, 18.0),
        },
        TechniqueKind::Add => Technique::Add {
            values: [0, 1, 2].map(|_| uniform(rng, -40.0, 40.0).round() as i16),
        },
        TechniqueKind::Multiply => Technique::Multiply {
            factors: [0, 1, 2].map(|_| uniform(rng, 0.7, 1.3)),
        },
        TechniqueKind::Sharp => Technique::Sharp {
            amount: uniform(rng, 0.5, 1.5),
        },
        TechniqueKind::Affine => Technique::Affine {
            rotation_deg: uniform(rng, -20.0, 20.0),
            scale: uniform(rng, 0.85, 1.15),
            translate_frac: [uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08)],
        },
    }
}

/// Applies one technique. `seed` feeds the noise stream and is ignored by
/// the deterministic techniques. Output dimensions always equal the input's.
pub fn apply_technique(
    image: &Image,
    technique: &Technique,
    seed: u64,
) -> Result<Image, AugmentError> {
    let oor = |reason: String| AugmentError::ParamOutOfRange {
        technique: technique.kind(),
        reason,
    };
    match *technique {
        Technique::GaussianNoise { sigma } => {
            if !(sigma > 0.0 && sigma <= 100.0) {
                return Err(oor(format!("sigma {sigma} not in (0, 100]")));
            }
            Ok(gaussian_noise(image, sigma, seed))
        }
        Technique::GaussianBlur { sigma } => {
            if !(sigma > 0.0 && sigma <= 8.0) {
                return Err(oor(format!("sigma {sigma} not in (0, 8]")));
            }
            Ok(gaussian_blur(image, sigma))
        }
        Technique::Flip => Ok(flip_horizontal(image)),
        Technique::Contrast { factor } => {
            if !(factor >= 0.0 && factor <= 4.0) {
                return Err(oor(format!("factor {factor} not in [0, 4]")));
            }
            Ok(contrast(image, factor))
        }
        Technique::Hue { degrees } => {
            if !degrees.is_finite() {
                return Err(oor(format!("degrees {degrees} not finite")));
            }
            Ok(hue_shift(image, degrees))
        }
        Technique::Add { values } => {
            if values.iter().any(|v| v.abs() > 255) {
                return Err(oor(format!("values {values:?} outside [-255, 255]")));
            }
            Ok(add(image, values))
        }
        Technique::Multiply { factors } => {
            if factors.iter().any(|f| !(*f >= 0.0 && *f <= 8.0)) {
                return Err(oor(format!("factors {factors:?} outside [0, 8]")));
            }
            Ok(multiply(image, factors))
        }
        Technique::Sharp { amount } => {
            if !(amount >= 0.0 && amount <= 4.0) {
                return Err(oor(format!("amount {amount} not in [0, 4]")));
            }
            Ok(sharp(image, amount))
        }
        Technique::Affine {
            rotation_deg,
            scale,
            translate_frac,
        } => {
            if !(scale > 0.0 && scale <= 4.0) {
                return Err(oor(format!("scale {scale} not in (0, 4]")));
            }
            if !rotation_deg.is_finite() || translate_frac.iter().any(|t| t.abs() > 1.0) {
                return Err(oor(format!(
                    "rotation {rotation_deg} / translation {translate_frac:?} out of range"
                )));
            }
            Ok(affine(image, rotation_deg, scale, translate_frac))
        }
    }
}

/// One species' row of the policy table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentationPolicy {
    pub species: SpeciesLabel,
    /// Enabled techniques in [`TechniqueKind::ALL`] order.
    pub enabled: Vec<TechniqueKind>,
    pub target_total: usize,
}

/// The fixed per-species policy: five species use only the first five
/// techniques, three use seven (no sharp or affine), and the rest use all
/// nine. Targets sum to 1328.
pub fn default_policy() -> BTreeMap<SpeciesLabel, AugmentationPolicy> {
    // (code, per-technique flags in TechniqueKind::ALL order, target)
    const ROWS: [(&str, [bool; 9], usize); 16] = [
        ("blasti", [true, true, true, true, true, false, false, false, false], 90),
        ("bonegl", [true; 9], 78),
        ("brhkyt", [true; 9], 65),
        ("cbrtsh", [true; 9], 91),
        ("cmnmyn", [true; 9], 91),
        ("gretit", [true; 9], 78),
        ("hilpig", [true, true, true, true, true, true, true, false, false], 80),
        ("himbul", [true, true, true, true, true, false, false, false, false], 99),
        ("himgri", [true, true, true, true, true, false, false, false, false], 100),
        ("hsparo", [true, true, true, true, true, false, false, false, false], 81),
        ("indvul", [true, true, true, true, true, false, false, false, false], 81),
        ("jglowl", [true; 9], 78),
        ("lbicrw", [true; 9], 78),
        ("mgprob", [true; 9], 78),
        ("rebimg", [true, true, true, true, true, true, true, false, false], 80),
        ("wcrsrt", [true, true, true, true, true, true, true, false, false], 80),
    ];
    ROWS.iter()
        .map(|(code, flags, target)| {
            let species = SpeciesLabel::from_code(code).expect("policy codes are valid");
            let enabled = TechniqueKind::ALL
                .iter()
                .zip(flags)
                .filter_map(|(kind, on)| on.then_some(*kind))
                .collect();
            (
                species,
                AugmentationPolicy {
                    species,
                    enabled,
                    target_total: *target,
                },
            )
        })
        .collect()
}

/// One planned augmented image: which source record, which technique, and
/// the per-(source, technique) repetition ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub source_index: usize,
    pub kind: TechniqueKind,
    pub ordinal: u64,
}

/// Plans `target_total - original_count` augmented images by cycling
/// round-robin over (technique, source) pairs: techniques advance fastest,
/// then sources, and `ordinal` counts full passes over all pairs.
pub fn expansion_schedule(
    original_count: usize,
    target_total: usize,
    enabled: &[TechniqueKind],
) -> Vec<ScheduleEntry> {
    assert!(original_count > 0 && !enabled.is_empty());
    let t = enabled.len();
    (0..target_total.saturating_sub(original_count))
        .map(|k| ScheduleEntry {
            source_index: (k / t) % original_count,
            kind: enabled[k % t],
            ordinal: (k / (t * original_count)) as u64,
        })
        .collect()
}

/// Seed for one augmented image, folded from the run seed, source record
/// id, technique name, and repetition ordinal with FNV-1a. Stable across
/// runs and independent of schedule position, so parallel and sequential
/// expansion produce identical images.
pub fn item_seed(run_seed: u64, source_id: &str, kind: TechniqueKind, ordinal: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let eat = |h: &mut u64, bytes: &[u8]| {
        for &b in bytes {
            *h = (*h ^ b as u64).wrapping_mul(0x100000001b3);
        }
    };
    eat(&mut h, &run_seed.to_le_bytes());
    eat(&mut h, source_id.as_bytes());
    eat(&mut h, &[0]);
    eat(&mut h, kind.name().as_bytes());
    eat(&mut h, &[0]);
    eat(&mut h, &ordinal.to_le_bytes());
    h
}

fn augmented_id(source_id: &str, kind: TechniqueKind, ordinal: u64) -> String {
    format!("{source_id}__{}_{ordinal}", kind.name())
}

/// Expands one class to `policy.target_total` records. Originals come first,
/// untouched; each augmented image is written to `out_dir` as
/// `<source id>__<technique>_<ordinal>.png` with provenance
/// [`Provenance::Augmented`]. The whole expansion is a pure function of
/// (sources, policy, seed).
pub fn expand_class(
    records: &[ImageRecord],
    policy: &AugmentationPolicy,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ImageRecord>, AugmentError> {
    if records.is_empty() {
        return Err(AugmentError::EmptyClass);
    }
    if let Some(bad) = records.iter().find(|r| r.label != Some(policy.species)) {
        return Err(AugmentError::MixedSpecies {
            expected: policy.species,
            found: bad.label,
        });
    }
    if policy.target_total < records.len() {
        return Err(AugmentError::TargetTooSmall {
            species: policy.species,
            originals: records.len(),
            target: policy.target_total,
        });
    }

    let schedule = expansion_schedule(records.len(), policy.target_total, &policy.enabled);
    if !schedule.is_empty() {
        std::fs::create_dir_all(out_dir).map_err(|source| AugmentError::Io {
            path: out_dir.to_path_buf(),
            source,
        })?;
    }
    let sources: Vec<Image> = records
        .iter()
        .map(|r| r.load_image())
        .collect::<Result<_, _>>()?;

    let augmented = crate::exec::try_map(&schedule, |entry| {
        let src = &records[entry.source_index];
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, &src.id, entry.kind, entry.ordinal));
        let technique = sample_technique(entry.kind, &mut rng);
        let noise_seed = rng.next_u64();
        let img = apply_technique(&sources[entry.source_index], &technique, noise_seed)?;
        let id = augmented_id(&src.id, entry.kind, entry.ordinal);
        let path = out_dir.join(format!("{id}.png"));
        img.save(&path)?;
        Ok::<_, AugmentError>(ImageRecord {
            id,
            path,
            label: src.label,
            width: img.width(),
            height: img.height(),
            split: src.split,
            provenance: Provenance::Augmented,
        })
    })?;

    let mut out = records.to_vec();
    out.extend(augmented);
    Ok(out)
}

/// Per-class line of the expansion count report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCount {
    pub species: SpeciesLabel,
    pub originals: usize,
    pub augmented: usize,
    pub total: usize,
}

/// Expands every class present in `manifest` with its policy. Output
/// records are grouped by class in label order, originals before augmented.
pub fn augment_dataset(
    manifest: &Manifest,
    policies: &BTreeMap<SpeciesLabel, AugmentationPolicy>,
    seed: u64,
    out_dir: &Path,
) -> Result<(Manifest, Vec<ClassCount>), AugmentError> {
    let mut all = Vec::new();
    let mut counts = Vec::new();
    for (species, n) in manifest.class_histogram() {
        if *n == 0 {
            continue;
        }
        let policy = policies
            .get(species)
            .ok_or(AugmentError::MissingPolicy(*species))?;
        let class_records: Vec<ImageRecord> = manifest
            .records_of(*species)
            .into_iter()
            .cloned()
            .collect();
        let expanded = expand_class(&class_records, policy, seed, out_dir)?;
        counts.push(ClassCount {
            species: *species,
            originals: class_records.len(),
            augmented: expanded.len() - class_records.len(),
            total: expanded.len(),
        });
        all.extend(expanded);
    }
    Ok((Manifest::from_records(all)?, counts))
}

/// Renders the per-class count report as an aligned text table.
pub fn format_count_report(counts: &[ClassCount]) -> String {
    let mut out = String::from("species  originals  augmented  total\n");
    let mut totals = (0usize, 0usize, 0usize);
    for c in counts {
        out.push_str(&format!(
            "{:<8} {:>9}  {:>9}  {:>5}\n",
            c.species.code(),
            c.originals,
            c.augmented,
            c.total
        ));
        totals.0 += c.originals;
        totals.1 += c.augmented;
        totals.2 += c.total;
    }
    out.push_str(&format!(
        "{:<8} {:>9}  {:>9}  {:>5}\n",
        "all", totals.0, totals.1, totals.2
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use std::collections::BTreeMap;

    #[test]
    fn policy_table_matches_expected_rows() {
        let policy = default_policy();
        assert_eq!(policy.len(), 16);

        let blasti = &policy[&SpeciesLabel::from_code("blasti").unwrap()];
        assert_eq!(
            blasti.enabled,
            vec![
                TechniqueKind::GaussianNoise,
                TechniqueKind::GaussianBlur,
                TechniqueKind::Flip,
                TechniqueKind::Contrast,
                TechniqueKind::Hue,
            ]
        );
        assert_eq!(blasti.target_total, 90);

        let brhkyt = &policy[&SpeciesLabel::from_code("brhkyt").unwrap()];
        assert_eq!(brhkyt.enabled, TechniqueKind::ALL.to_vec());
        assert_eq!(brhkyt.target_total, 65);

        let rebimg = &policy[&SpeciesLabel::from_code("rebimg").unwrap()];
        assert_eq!(rebimg.enabled.len(), 7);
        assert!(!rebimg.enabled.contains(&TechniqueKind::Sharp));
        assert!(!rebimg.enabled.contains(&TechniqueKind::Affine));

        assert!(policy.values().all(|p| !p.enabled.is_empty()));
    }

    #[test]
    fn policy_targets_sum_to_1328() {
        let sum: usize = default_policy().values().map(|p| p.target_total).sum();
        assert_eq!(sum, 1328);
    }

    #[test]
    fn schedule_matches_nested_loop_enumeration() {
        // Oracle: build the same plan by explicit nested loops (passes,
        // then sources, then techniques) instead of index arithmetic.
        let cases = [(3usize, 2usize, 9usize), (18, 5, 90), (4, 9, 100), (5, 3, 5)];
        for (n_src, n_tech, target) in cases {
            let enabled: Vec<TechniqueKind> = TechniqueKind::ALL[..n_tech].to_vec();
            let got = expansion_schedule(n_src, target, &enabled);

            let mut expected = Vec::new();
            let mut pass = 0u64;
            'outer: loop {
                for src in 0..n_src {
                    for &kind in &enabled {
                        if expected.len() == target - n_src {
                            break 'outer;
                        }
                        expected.push(ScheduleEntry {
                            source_index: src,
                            kind,
                            ordinal: pass,
                        });
                    }
                }
                pass += 1;
            }
            assert_eq!(got, expected, "case {n_src}/{n_tech}/{target}");
        }
    }

    #[test]
    fn schedule_spreads_evenly_over_pairs() {
        // 3 originals, 2 techniques, target 9: six augmented images, one
        // per (technique, source) pair.
        let enabled = [TechniqueKind::Flip, TechniqueKind::Contrast];
        let schedule = expansion_schedule(3, 9, &enabled);
        assert_eq!(schedule.len(), 6);
        let mut counts: BTreeMap<(usize, TechniqueKind), usize> = BTreeMap::new();
        for e in &schedule {
            *counts.entry((e.source_index, e.kind)).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 6);
        assert!(counts.values().all(|&c| c == 1));
        assert!(schedule.iter().all(|e| e.ordinal == 0));
    }

    #[test]
    fn schedule_counts_never_differ_by_more_than_one() {
        let enabled: Vec<TechniqueKind> = TechniqueKind::ALL[..5].to_vec();
        let schedule = expansion_schedule(18, 90, &enabled);
        assert_eq!(schedule.len(), 72);
        let mut per_pair: BTreeMap<(usize, TechniqueKind), usize> = BTreeMap::new();
        for e in &schedule {
            *per_pair.entry((e.source_index, e.kind)).or_insert(0) += 1;
        }
        let min = per_pair.values().min().unwrap();
        let max = per_pair.values().max().unwrap();
        assert!(max - min <= 1, "unbalanced: min {min}, max {max}");
    }

    #[test]
    fn item_seed_distinguishes_every_input() {
        let a = item_seed(1, "img", TechniqueKind::Flip, 0);
        assert_ne!(a, item_seed(2, "img", TechniqueKind::Flip, 0));
        assert_ne!(a, item_seed(1, "img2", TechniqueKind::Flip, 0));
        assert_ne!(a, item_seed(1, "img", TechniqueKind::Hue, 0));
        assert_ne!(a, item_seed(1, "img", TechniqueKind::Flip, 1));
        assert_eq!(a, item_seed(1, "img", TechniqueKind::Flip, 0));
    }

    #[test]
    fn sampled_params_stay_in_their_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            for kind in TechniqueKind::ALL {
                match sample_technique(kind, &mut rng) {
                    Technique::GaussianNoise { sigma } => assert!((5.0..=25.0).contains(&sigma)),
                    Technique::GaussianBlur { sigma } => assert!((0.5..=2.0).contains(&sigma)),
                    Technique::Flip => {}
                    Technique::Contrast { factor } => assert!((0.6..=1.4).contains(&factor)),
                    Technique::Hue { degrees } => assert!((-18.0..=18.0).contains(&degrees)),
                    Technique::Add { values } => {
                        assert!(values.iter().all(|v| (-40..=40).contains(v)))
                    }
                    Technique::Multiply { factors } => {
                        assert!(factors.iter().all(|f| (0.7..=1.3).contains(f)))
                    }
                    Technique::Sharp { amount } => assert!((0.5..=1.5).contains(&amount)),
                    Technique::Affine {
                        rotation_deg,
                        scale,
                        translate_frac,
                    } => {
                        assert!((-20.0..=20.0).contains(&rotation_deg));
                        assert!((0.85..=1.15).contains(&scale));
                        assert!(translate_frac.iter().all(|t| t.abs() <= 0.08));
                    }
                }
            }
        }
    }

    #[test]
    fn apply_rejects_out_of_range_params() {
        let img = Image::filled(4, 4, [10, 20, 30]);
        let bad = Technique::GaussianBlur { sigma: -1.0 };
        assert!(matches!(
            apply_technique(&img, &bad, 0),
            Err(AugmentError::ParamOutOfRange { technique, .. })
                if technique == TechniqueKind::GaussianBlur
        ));
    }

    #[test]
    fn apply_preserves_dimensions_for_all_kinds() {
        let img = Image::filled(11, 7, [100, 150, 200]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in TechniqueKind::ALL {
            let t = sample_technique(kind, &mut rng);
            let out = apply_technique(&img, &t, 77).unwrap();
            assert_eq!((out.width(), out.height()), (11, 7), "{kind}");
        }
    }

    fn class_fixture(dir: &Path, code: &str, n: usize) -> Vec<ImageRecord> {
        let label = SpeciesLabel::from_code(code).unwrap();
        (0..n)
            .map(|i| {
                let mut img = Image::filled(12, 10, [40, 80, 120]);
                img.set_pixel(i as u32 % 12, 0, [255, 0, 0]);
                let path = dir.join(format!("{code}_{i}.png"));
                img.save(&path).unwrap();
                ImageRecord {
                    id: format!("{code}_{i}"),
                    path,
                    label: Some(label),
                    width: 12,
                    height: 10,
                    split: Split::Train,
                    provenance: Provenance::Original,
                }
            })
            .collect()
    }

    #[test]
    fn expand_at_target_returns_originals_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let records = class_fixture(dir.path(), "blasti", 5);
        let policy = AugmentationPolicy {
            species: SpeciesLabel::from_code("blasti").unwrap(),
            enabled: vec![TechniqueKind::Flip],
            target_total: 5,
        };
        let out_dir = dir.path().join("aug");
        let out = expand_class(&records, &policy, 1, &out_dir).unwrap();
        assert_eq!(out, records);
        assert!(!out_dir.exists());
    }

    #[test]
    fn expand_blasti_policy_reaches_90() {
        let dir = tempfile::tempdir().unwrap();
        let records = class_fixture(dir.path(), "blasti", 18);
        let policy = default_policy()[&SpeciesLabel::from_code("blasti").unwrap()].clone();
        let out = expand_class(&records, &policy, 42, &dir.path().join("aug")).unwrap();
        assert_eq!(out.len(), 90);
        assert_eq!(&out[..18], &records[..]);
        assert!(out[18..]
            .iter()
            .all(|r| r.provenance == Provenance::Augmented));
        // Ids name their producing technique.
        assert!(out[18..].iter().all(|r| {
            TechniqueKind::ALL
                .iter()
                .any(|k| r.id.contains(&format!("__{}_", k.name())))
        }));
        // All augmented files exist and are loadable.
        for r in &out[18..] {
            assert!(r.path.exists(), "{:?}", r.path);
        }
    }

    #[test]
    fn expansion_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let records = class_fixture(dir.path(), "gretit", 3);
        let policy = AugmentationPolicy {
            species: SpeciesLabel::from_code("gretit").unwrap(),
            enabled: vec![TechniqueKind::GaussianNoise, TechniqueKind::Affine],
            target_total: 11,
        };
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let recs_a = expand_class(&records, &policy, 7, &out_a).unwrap();
        let recs_b = expand_class(&records, &policy, 7, &out_b).unwrap();
        assert_eq!(recs_a.len(), recs_b.len());
        for (a, b) in recs_a[3..].iter().zip(&recs_b[3..]) {
            assert_eq!(a.id, b.id);
            let bytes_a = std::fs::read(&a.path).unwrap();
            let bytes_b = std::fs::read(&b.path).unwrap();
            assert_eq!(bytes_a, bytes_b, "{}", a.id);
        }
        // A different seed changes at least one image.
        let out_c = dir.path().join("c");
        let recs_c = expand_class(&records, &policy, 8, &out_c).unwrap();
        let changed = recs_a[3..].iter().zip(&recs_c[3..]).any(|(a, c)| {
            std::fs::read(&a.path).unwrap() != std::fs::read(&c.path).unwrap()
        });
        assert!(changed);
    }

    #[test]
    fn expand_rejects_bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let records = class_fixture(dir.path(), "blasti", 5);
        let mut policy = AugmentationPolicy {
            species: SpeciesLabel::from_code("blasti").unwrap(),
            enabled: vec![TechniqueKind::Flip],
            target_total: 3,
        };
        assert!(matches!(
            expand_class(&records, &policy, 1, dir.path()),
            Err(AugmentError::TargetTooSmall { originals: 5, target: 3, .. })
        ));
        policy.species = SpeciesLabel::from_code("bonegl").unwrap();
        policy.target_total = 10;
        assert!(matches!(
            expand_class(&records, &policy, 1, dir.path()),
            Err(AugmentError::MixedSpecies { .. })
        ));
        assert!(matches!(
            expand_class(&[], &policy, 1, dir.path()),
            Err(AugmentError::EmptyClass)
        ));
    }

    #[test]
    fn augment_dataset_expands_every_class_and_reports_counts() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = class_fixture(dir.path(), "blasti", 2);
        records.extend(class_fixture(dir.path(), "bonegl", 3));
        let manifest = Manifest::from_records(records).unwrap();
        let mut policies = BTreeMap::new();
        for (code, target) in [("blasti", 6), ("bonegl", 7)] {
            let species = SpeciesLabel::from_code(code).unwrap();
            policies.insert(
                species,
                AugmentationPolicy {
                    species,
                    enabled: vec![TechniqueKind::Flip, TechniqueKind::Add],
                    target_total: target,
                },
            );
        }
        let (out, counts) =
            augment_dataset(&manifest, &policies, 3, &dir.path().join("aug")).unwrap();
        assert_eq!(out.len(), 13);
        assert_eq!(
            counts,
            vec![
                ClassCount {
                    species: SpeciesLabel::from_code("blasti").unwrap(),
                    originals: 2,
                    augmented: 4,
                    total: 6,
                },
                ClassCount {
                    species: SpeciesLabel::from_code("bonegl").unwrap(),
                    originals: 3,
                    augmented: 4,
                    total: 7,
                },
            ]
        );
        let report = format_count_report(&counts);
        assert!(report.contains("blasti"));
        assert!(report.lines().last().unwrap().contains("13"));
    }
}
