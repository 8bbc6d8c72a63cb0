//! Confusion-matrix evaluation: per-class precision/recall/F1, macro and
//! micro aggregates, text-grid matrix I/O, and a heatmap render.
//!
//! Convention throughout: rows are ground truth, columns are predictions.
//! True positives sit on the diagonal; false positives for a class are its
//! column sum minus the diagonal; false negatives its row sum minus the
//! diagonal.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{SpeciesLabel, NUM_SPECIES};
use crate::raster::Image;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("truth and prediction lists differ in length: {truth} vs {predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("cannot evaluate an empty sample list")]
    Empty,
    #[error("matrix file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("matrix file {path} line {line}: {reason}")]
    MalformedMatrix {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
}

/// 16x16 count grid; `counts[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_SPECIES]; NUM_SPECIES],
}

impl ConfusionMatrix {
    pub fn zero() -> Self {
        Self {
            counts: [[0; NUM_SPECIES]; NUM_SPECIES],
        }
    }

    pub fn count(&self, truth: SpeciesLabel, predicted: SpeciesLabel) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn add(&mut self, truth: SpeciesLabel, predicted: SpeciesLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_SPECIES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, truth: SpeciesLabel) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn col_sum(&self, predicted: SpeciesLabel) -> u64 {
        self.counts.iter().map(|row| row[predicted.index()]).sum()
    }

    /// Renders the matrix as a text grid: a header row of species codes,
    /// then one row per truth class prefixed with its code.
    pub fn to_text_grid(&self) -> String {
        let mut out = String::from("truth\\pred");
        for label in SpeciesLabel::all() {
            out.push_str(&format!(" {:>7}", label.code()));
        }
        out.push('\n');
        for truth in SpeciesLabel::all() {
            out.push_str(&format!("{:<10}", truth.code()));
            for pred in SpeciesLabel::all() {
                out.push_str(&format!(" {:>7}", self.count(truth, pred)));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_text_grid(&self, path: &Path) -> Result<(), EvalError> {
        fs::write(path, self.to_text_grid()).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Parses the [`ConfusionMatrix::to_text_grid`] format back.
    pub fn load_text_grid(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |line: usize, reason: String| EvalError::MalformedMatrix {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| bad(1, "missing header".into()))?;
        let headers: Vec<&str> = header.split_whitespace().skip(1).collect();
        let expected: Vec<&str> = SpeciesLabel::all().map(|l| l.code()).collect();
        if headers != expected {
            return Err(bad(1, format!("unexpected header columns {headers:?}")));
        }
        let mut matrix = Self::zero();
        let mut rows_seen = 0;
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != NUM_SPECIES + 1 {
                return Err(bad(
                    lineno + 1,
                    format!("expected {} fields, got {}", NUM_SPECIES + 1, fields.len()),
                ));
            }
            let truth = SpeciesLabel::from_code(fields[0])
                .map_err(|_| bad(lineno + 1, format!("unknown row label {:?}", fields[0])))?;
            for (ci, cell) in fields[1..].iter().enumerate() {
                let v: u64 = cell
                    .parse()
                    .map_err(|_| bad(lineno + 1, format!("bad count {cell:?}")))?;
                matrix.counts[truth.index()][ci] = v;
            }
            rows_seen += 1;
        }
        if rows_seen != NUM_SPECIES {
            return Err(bad(0, format!("expected {NUM_SPECIES} rows, got {rows_seen}")));
        }
        Ok(matrix)
    }

    /// Renders a heatmap PNG: one cell per entry shaded by its share of the
    /// row total, diagonal in green, off-diagonal in red.
    pub fn save_heatmap(&self, path: &Path, cell_px: u32) -> Result<(), EvalError> {
        let cell = cell_px.max(1);
        let size = cell * NUM_SPECIES as u32;
        let mut img = Image::filled(size, size, [255, 255, 255]);
        for truth in 0..NUM_SPECIES {
            let row_total: u64 = self.counts[truth].iter().sum();
            for pred in 0..NUM_SPECIES {
                let share = if row_total == 0 {
                    0.0
                } else {
                    self.counts[truth][pred] as f64 / row_total as f64
                };
                let heat = (share * 255.0).round() as u8;
                let color = if truth == pred {
                    [255 - heat, 255, 255 - heat]
                } else {
                    [255, 255 - heat, 255 - heat]
                };
                for dy in 0..cell {
                    for dx in 0..cell {
                        img.set_pixel(pred as u32 * cell + dx, truth as u32 * cell + dy, color);
                    }
                }
            }
        }
        img.save(path)?;
        Ok(())
    }
}

/// Tallies paired labels into a matrix. Errors on length mismatch or empty
/// input.
pub fn build_confusion(
    truth: &[SpeciesLabel],
    predicted: &[SpeciesLabel],
) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut matrix = ConfusionMatrix::zero();
    for (&t, &p) in truth.iter().zip(predicted) {
        matrix.add(t, p);
    }
    Ok(matrix)
}

/// TP / (TP + FP); `None` when the class was never predicted.
pub fn precision(matrix: &ConfusionMatrix, class: SpeciesLabel) -> Option<f64> {
    let tp = matrix.count(class, class);
    let denom = matrix.col_sum(class);
    (denom > 0).then(|| tp as f64 / denom as f64)
}

/// TP / (TP + FN); `None` when the class has no truth samples.
pub fn recall(matrix: &ConfusionMatrix, class: SpeciesLabel) -> Option<f64> {
    let tp = matrix.count(class, class);
    let denom = matrix.row_sum(class);
    (denom > 0).then(|| tp as f64 / denom as f64)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision == 0.0 && recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Defined only when both precision and recall are.
    pub f1: Option<f64>,
    /// Truth samples of this class.
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: BTreeMap<SpeciesLabel, ClassMetrics>,
    /// Unweighted means over classes where the metric is defined.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_accuracy: f64,
    /// Classes excluded from at least one macro mean.
    pub undefined_classes: Vec<SpeciesLabel>,
}

/// Computes the full metrics report from a matrix with at least one count.
pub fn report(matrix: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = matrix.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let mut per_class = BTreeMap::new();
    let mut undefined = Vec::new();
    let (mut p_sum, mut p_n) = (0.0, 0u32);
    let (mut r_sum, mut r_n) = (0.0, 0u32);
    let (mut f_sum, mut f_n) = (0.0, 0u32);
    for class in SpeciesLabel::all() {
        let p = precision(matrix, class);
        let r = recall(matrix, class);
        let f = match (p, r) {
            (Some(p), Some(r)) => Some(f1(p, r)),
            _ => None,
        };
        if let Some(p) = p {
            p_sum += p;
            p_n += 1;
        }
        if let Some(r) = r {
            r_sum += r;
            r_n += 1;
        }
        if let Some(f) = f {
            f_sum += f;
            f_n += 1;
        }
        if p.is_none() || r.is_none() {
            undefined.push(class);
        }
        per_class.insert(
            class,
            ClassMetrics {
                precision: p,
                recall: r,
                f1: f,
                support: matrix.row_sum(class),
            },
        );
    }
    Ok(MetricsReport {
        per_class,
        macro_precision: if p_n > 0 { p_sum / p_n as f64 } else { 0.0 },
        macro_recall: if r_n > 0 { r_sum / r_n as f64 } else { 0.0 },
        macro_f1: if f_n > 0 { f_sum / f_n as f64 } else { 0.0 },
        micro_accuracy: matrix.trace() as f64 / total as f64,
        undefined_classes: undefined,
    })
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "undef".to_string(),
    }
}

/// Renders the report as a text table: per-class rows (percentages, two
/// decimals) followed by macro and micro summary lines and any flagged
/// classes.
pub fn format_report(r: &MetricsReport) -> String {
    let mut out = String::from("class    precision  recall     f1     support\n");
    for (label, m) in &r.per_class {
        out.push_str(&format!(
            "{:<8} {:>9}  {:>6}  {:>6}  {:>7}\n",
            label.code(),
            pct(m.precision),
            pct(m.recall),
            pct(m.f1),
            m.support
        ));
    }
    out.push_str(&format!(
        "\nmacro    precision {} recall {} f1 {}\n",
        pct(Some(r.macro_precision)),
        pct(Some(r.macro_recall)),
        pct(Some(r.macro_f1)),
    ));
    out.push_str(&format!("micro    accuracy {}\n", pct(Some(r.micro_accuracy))));
    if !r.undefined_classes.is_empty() {
        let names: Vec<&str> = r.undefined_classes.iter().map(|l| l.code()).collect();
        out.push_str(&format!(
            "excluded from macro (undefined metrics): {}\n",
            names.join(", ")
        ));
    }
    out
}

pub fn save_report(r: &MetricsReport, path: &Path) -> Result<(), EvalError> {
    fs::write(path, format_report(r)).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}
