//! Dataset manifests: the 16-species label space, image records, manifest
//! file I/O, directory ingestion, and the stratified train/validation split.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::raster::Image;

/// Number of bird species in the label space.
pub const NUM_SPECIES: usize = 16;

/// Species codes in alphabetical order; a label's index is its position here.
pub const SPECIES_CODES: [&str; NUM_SPECIES] = [
    "blasti", "bonegl", "brhkyt", "cbrtsh", "cmnmyn", "gretit", "hilpig", "himbul", "himgri",
    "hsparo", "indvul", "jglowl", "lbicrw", "mgprob", "rebimg", "wcrsrt",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {path} row {row}: {reason}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("unknown species code {0:?}")]
    UnknownSpecies(String),
    #[error("record {id}: image {path} does not exist")]
    MissingImage { id: String, path: PathBuf },
    #[error("record {id}: {source}")]
    BadImage {
        id: String,
        source: crate::raster::RasterError,
    },
    #[error("record {0}: width and height must be >= 1")]
    EmptyDimensions(String),
    #[error("record {id} has split {split} but no species label")]
    MissingLabel { id: String, split: Split },
    #[error("val_fraction must be in (0, 1), got {0}")]
    BadValFraction(f64),
    #[error("class {0} has {1} records; the split needs at least 2 per class")]
    ClassTooSmall(SpeciesLabel, usize),
    #[error("ingest root {0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("ingest: directory name {0:?} is not a species code")]
    UnknownSpeciesDir(String),
}

/// One of the 16 bird species, stored as its alphabetical index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeciesLabel(u8);

impl SpeciesLabel {
    /// All labels in index order.
    pub fn all() -> impl Iterator<Item = SpeciesLabel> {
        (0..NUM_SPECIES as u8).map(SpeciesLabel)
    }

    pub fn from_code(code: &str) -> Result<Self, DatasetError> {
        SPECIES_CODES
            .iter()
            .position(|c| *c == code)
            .map(|i| SpeciesLabel(i as u8))
            .ok_or_else(|| DatasetError::UnknownSpecies(code.to_string()))
    }

    /// Panics if `index >= 16`.
    pub fn from_index(index: usize) -> Self {
        assert!(index < NUM_SPECIES, "species index out of range: {index}");
        SpeciesLabel(index as u8)
    }

    pub fn code(&self) -> &'static str {
        SPECIES_CODES[self.0 as usize]
    }

    pub fn index(&self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SpeciesLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a record's pixels came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Provenance {
    #[default]
    Original,
    Augmented,
    Crop,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Augmented => "augmented",
            Provenance::Crop => "crop",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(Provenance::Original),
            "augmented" => Some(Provenance::Augmented),
            "crop" => Some(Provenance::Crop),
            _ => None,
        }
    }
}

/// One dataset image. `label` is absent only for test images.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: Option<SpeciesLabel>,
    pub width: u32,
    pub height: u32,
    pub split: Split,
    pub provenance: Provenance,
}

impl ImageRecord {
    pub fn load_image(&self) -> Result<Image, DatasetError> {
        Image::load(&self.path).map_err(|source| DatasetError::BadImage {
            id: self.id.clone(),
            source,
        })
    }
}

/// An ordered list of image records plus its per-class histogram.
///
/// The histogram is recomputed on construction, so it is always exactly the
/// count of records per label.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    records: Vec<ImageRecord>,
    histogram: BTreeMap<SpeciesLabel, usize>,
}

impl Manifest {
    /// Validates record invariants (unique ids, dimensions, labels present
    /// for train/val) and computes the class histogram.
    pub fn from_records(records: Vec<ImageRecord>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        let mut histogram = BTreeMap::new();
        for rec in &records {
            if !seen.insert(rec.id.clone()) {
                return Err(DatasetError::DuplicateId(rec.id.clone()));
            }
            if rec.width < 1 || rec.height < 1 {
                return Err(DatasetError::EmptyDimensions(rec.id.clone()));
            }
            match (rec.label, rec.split) {
                (None, Split::Train | Split::Val) => {
                    return Err(DatasetError::MissingLabel {
                        id: rec.id.clone(),
                        split: rec.split,
                    })
                }
                (Some(label), _) => {
                    *histogram.entry(label).or_insert(0) += 1;
                }
                (None, Split::Test) => {}
            }
        }
        Ok(Self { records, histogram })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Count of records per label, over records that carry one.
    pub fn class_histogram(&self) -> &BTreeMap<SpeciesLabel, usize> {
        &self.histogram
    }

    /// Records of one class, in manifest order.
    pub fn records_of(&self, label: SpeciesLabel) -> Vec<&ImageRecord> {
        self.records
            .iter()
            .filter(|r| r.label == Some(label))
            .collect()
    }

    /// Parses a manifest file.
    ///
    /// One record per line: `id path species_code|- split [provenance]`,
    /// whitespace-separated. Blank lines and lines starting with `#` are
    /// skipped. Relative paths resolve against the manifest's directory.
    /// Dimensions are read from each image file's header, so every
    /// referenced image must exist.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let row = lineno + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 4 || fields.len() > 5 {
                return Err(DatasetError::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    reason: format!("expected 4 or 5 fields, got {}", fields.len()),
                });
            }
            let id = fields[0].to_string();
            let rec_path = {
                let p = Path::new(fields[1]);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            let label = match fields[2] {
                "-" => None,
                code => Some(SpeciesLabel::from_code(code).map_err(|_| {
                    DatasetError::MalformedRow {
                        path: path.to_path_buf(),
                        row,
                        reason: format!("unknown species code {:?}", code),
                    }
                })?),
            };
            let split = Split::parse(fields[3]).ok_or_else(|| DatasetError::MalformedRow {
                path: path.to_path_buf(),
                row,
                reason: format!("unknown split {:?}", fields[3]),
            })?;
            let provenance = match fields.get(4) {
                None => Provenance::Original,
                Some(s) => Provenance::parse(s).ok_or_else(|| DatasetError::MalformedRow {
                    path: path.to_path_buf(),
                    row,
                    reason: format!("unknown provenance {:?}", s),
                })?,
            };
            if !rec_path.exists() {
                return Err(DatasetError::MissingImage {
                    id,
                    path: rec_path,
                });
            }
            let (width, height) =
                Image::dimensions_of(&rec_path).map_err(|source| DatasetError::BadImage {
                    id: id.clone(),
                    source,
                })?;
            records.push(ImageRecord {
                id,
                path: rec_path,
                label,
                width,
                height,
                split,
                provenance,
            });
        }
        Self::from_records(records)
    }

    /// Writes the manifest in the format [`Manifest::load`] parses.
    ///
    /// Paths under the manifest's directory are written relative to it.
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut out = String::new();
        for rec in &self.records {
            let rel = rec
                .path
                .strip_prefix(base)
                .unwrap_or(&rec.path)
                .to_string_lossy()
                .into_owned();
            let label = rec.label.map_or("-", |l| l.code());
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                rec.id,
                rel,
                label,
                rec.split,
                rec.provenance.as_str()
            ));
        }
        let mut f = fs::File::create(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        f.write_all(out.as_bytes()).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Splits a fully labeled manifest into stratified train and validation
/// manifests.
///
/// Per class, `round(val_fraction * count)` records (at least 1) go to
/// validation; membership is drawn with a ChaCha stream keyed on
/// `(seed, class index)`, so the same seed always produces the same split.
/// Output records keep manifest order; the train manifest's records get
/// `split = train` and the validation manifest's `split = val`.
pub fn split_train_val(
    manifest: &Manifest,
    val_fraction: f64,
    seed: u64,
) -> Result<(Manifest, Manifest), DatasetError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DatasetError::BadValFraction(val_fraction));
    }
    let mut by_class: BTreeMap<SpeciesLabel, Vec<usize>> = BTreeMap::new();
    for (i, rec) in manifest.records().iter().enumerate() {
        match rec.label {
            Some(label) => by_class.entry(label).or_default().push(i),
            None => {
                return Err(DatasetError::MissingLabel {
                    id: rec.id.clone(),
                    split: rec.split,
                })
            }
        }
    }
    let mut val_indices = HashSet::new();
    for (label, indices) in &by_class {
        if indices.len() < 2 {
            return Err(DatasetError::ClassTooSmall(*label, indices.len()));
        }
        let val_count = ((val_fraction * indices.len() as f64).round() as usize).max(1);
        let mut order = indices.clone();
        // Per-class stream: same seed, same membership, regardless of how
        // other classes are sized.
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (label.index() as u64).wrapping_mul(0x9e3779b97f4a7c15),
        );
        crate::rng::shuffle(&mut rng, &mut order);
        val_indices.extend(order.into_iter().take(val_count));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, rec) in manifest.records().iter().enumerate() {
        let mut rec = rec.clone();
        if val_indices.contains(&i) {
            rec.split = Split::Val;
            val.push(rec);
        } else {
            rec.split = Split::Train;
            train.push(rec);
        }
    }
    Ok((Manifest::from_records(train)?, Manifest::from_records(val)?))
}

/// Scans `images_dir` for species-code subdirectories and builds one
/// `split = train` record per image file found. Directory names that are
/// not species codes are an error; ids are `<code>_<file stem>`.
pub fn ingest_directory(images_dir: &Path) -> Result<Manifest, DatasetError> {
    if !images_dir.is_dir() {
        return Err(DatasetError::NotADirectory(images_dir.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(images_dir)
        .map_err(|source| DatasetError::Io {
            path: images_dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut records = Vec::new();
    for dir in dirs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let label = SpeciesLabel::from_code(&name)
            .map_err(|_| DatasetError::UnknownSpeciesDir(name.clone()))?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|source| DatasetError::Io {
                path: dir.clone(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("png" | "jpg" | "jpeg")
                    )
            })
            .collect();
        files.sort();
        for file in files {
            let stem = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let id = format!("{}_{}", label.code(), stem);
            let (width, height) =
                Image::dimensions_of(&file).map_err(|source| DatasetError::BadImage {
                    id: id.clone(),
                    source,
                })?;
            records.push(ImageRecord {
                id,
                path: file,
                label: Some(label),
                width,
                height,
                split: Split::Train,
                provenance: Provenance::Original,
            });
        }
    }
    Manifest::from_records(records)
}
