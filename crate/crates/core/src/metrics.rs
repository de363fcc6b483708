//! Segmentation metrics over the eight-class taxonomy.
//!
//! `OA = Σ pᵢAᵢ` over all classes, where `pᵢ` is the ground-truth share of
//! class `i` and `Aᵢ` its accuracy; `OA₇` is the same sum restricted to the
//! seven non-clutter classes and renormalized by their share. Both reduce to
//! ratios of confusion-matrix entries, which is how they are computed here.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::labels::{SemanticClass, NUM_CLASSES};

const CLUTTER: usize = SemanticClass::Clutter as usize;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {gt} ground-truth labels vs {pred} predictions")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("label out of range at position {position}: {value}")]
    LabelOutOfRange { position: usize, value: i64 },
    #[error("empty matrix: no evaluated points")]
    EmptyMatrix,
    #[error("no non-clutter ground truth")]
    NoNonClutter,
    #[error("empty list")]
    EmptyList,
    #[error("missing proportion {0}%")]
    MissingProportion(u32),
}

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

fn check_label(position: usize, value: i64) -> Result<usize, MetricsError> {
    usize::try_from(value)
        .ok()
        .filter(|&v| v < NUM_CLASSES)
        .ok_or(MetricsError::LabelOutOfRange { position, value })
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, gt: SemanticClass, pred: SemanticClass) {
        self.counts[gt as usize][pred as usize] += 1;
    }

    /// Entrywise sum; merging shard matrices equals accumulating the
    /// concatenated stream.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }
}

/// Streams label pairs into a matrix. Positions in errors are 0-based.
pub fn accumulate<G, P>(gt: G, pred: P) -> Result<ConfusionMatrix, MetricsError>
where
    G: IntoIterator<Item = i64>,
    P: IntoIterator<Item = i64>,
{
    let mut cm = ConfusionMatrix::new();
    accumulate_into(&mut cm, gt, pred, 0)?;
    Ok(cm)
}

/// Like [`accumulate`], adding to an existing matrix; `offset` shifts the
/// positions reported in errors.
pub fn accumulate_into<G, P>(cm: &mut ConfusionMatrix, gt: G, pred: P, offset: usize) -> Result<usize, MetricsError>
where
    G: IntoIterator<Item = i64>,
    P: IntoIterator<Item = i64>,
{
    let mut g = gt.into_iter();
    let mut p = pred.into_iter();
    let mut n = 0usize;
    loop {
        match (g.next(), p.next()) {
            (Some(a), Some(b)) => {
                let pos = offset + n;
                let (a, b) = (check_label(pos, a)?, check_label(pos, b)?);
                cm.counts[a][b] += 1;
                n += 1;
            }
            (None, None) => return Ok(n),
            (Some(_), None) => {
                return Err(MetricsError::LengthMismatch { gt: n + 1 + g.count(), pred: n });
            }
            (None, Some(_)) => {
                return Err(MetricsError::LengthMismatch { gt: n, pred: n + 1 + p.count() });
            }
        }
    }
}

/// `trace / total`.
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Accuracy over ground-truth points of the seven non-clutter classes.
/// Predicting clutter for such a point counts as an error.
pub fn oa7(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let correct: u64 = (0..CLUTTER).map(|i| cm.counts[i][i]).sum();
    let total: u64 = (0..CLUTTER).map(|i| cm.row_sum(i)).sum();
    if total == 0 {
        return Err(MetricsError::NoNonClutter);
    }
    Ok(correct as f64 / total as f64)
}

/// Per-class accuracy `Aᵢ = TPᵢ / (ground-truth count)`; `None` when absent.
pub fn class_accuracy(cm: &ConfusionMatrix, class: SemanticClass) -> Option<f64> {
    let i = class as usize;
    let row = cm.row_sum(i);
    (row > 0).then(|| cm.counts[i][i] as f64 / row as f64)
}

/// `TP / (TP + FP + FN)`; `None` when the class is absent from both sides.
pub fn iou(cm: &ConfusionMatrix, class: SemanticClass) -> Result<Option<f64>, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let i = class as usize;
    let tp = cm.counts[i][i];
    let denom = cm.row_sum(i) + cm.col_sum(i) - tp;
    Ok((denom > 0).then(|| tp as f64 / denom as f64))
}

/// Unweighted mean over classes with a defined IoU.
pub fn mean_iou(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in SemanticClass::ALL {
        if let Some(v) = iou(cm, c)? {
            sum += v;
            n += 1;
        }
    }
    // A nonempty matrix defines at least one class.
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub oa: f64,
    pub oa7: f64,
    pub miou: f64,
    pub per_class_acc: [Option<f64>; NUM_CLASSES],
    pub per_class_iou: [Option<f64>; NUM_CLASSES],
}

impl EvalReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self, MetricsError> {
        let mut per_class_iou = [None; NUM_CLASSES];
        let mut per_class_acc = [None; NUM_CLASSES];
        for c in SemanticClass::ALL {
            per_class_iou[c as usize] = iou(cm, c)?;
            per_class_acc[c as usize] = class_accuracy(cm, c);
        }
        Ok(Self { oa: overall_accuracy(cm)?, oa7: oa7(cm)?, miou: mean_iou(cm)?, per_class_acc, per_class_iou })
    }

    /// Metric-wise mean (per-class entries over the reports that define them).
    pub fn average(reports: &[EvalReport]) -> Result<Self, MetricsError> {
        if reports.is_empty() {
            return Err(MetricsError::EmptyList);
        }
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let mean_opt = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let mut out = Self {
            oa: mean(&|r| r.oa),
            oa7: mean(&|r| r.oa7),
            miou: mean(&|r| r.miou),
            per_class_acc: [None; NUM_CLASSES],
            per_class_iou: [None; NUM_CLASSES],
        };
        for i in 0..NUM_CLASSES {
            out.per_class_acc[i] = mean_opt(&|r| r.per_class_acc[i]);
            out.per_class_iou[i] = mean_opt(&|r| r.per_class_iou[i]);
        }
        Ok(out)
    }
}

/// Highest mIoU wins; ties go to the earliest epoch.
pub fn select_best(reports: &[(u32, EvalReport)]) -> Result<&(u32, EvalReport), MetricsError> {
    reports
        .iter()
        .min_by(|a, b| b.1.miou.total_cmp(&a.1.miou).then(a.0.cmp(&b.0)))
        .ok_or(MetricsError::EmptyList)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationRow {
    pub proportion: u32,
    pub oa: f64,
    pub oa7: f64,
    pub miou: f64,
    pub per_class_acc: [Option<f64>; NUM_CLASSES],
}

/// Mixing minus benchmark; positive means mixing wins.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationTable {
    pub range: (u32, u32),
    pub rows: Vec<DeviationRow>,
    pub average: DeviationRow,
}

/// Deltas at every proportion in `lo..=hi` (step 5) and their averages.
pub fn deviation_table(
    mix: &BTreeMap<u32, EvalReport>,
    bench: &BTreeMap<u32, EvalReport>,
    range: (u32, u32),
) -> Result<DeviationTable, MetricsError> {
    let (lo, hi) = range;
    let mut rows = Vec::new();
    for p in (lo..=hi).filter(|p| p % 5 == 0) {
        let m = mix.get(&p).ok_or(MetricsError::MissingProportion(p))?;
        let b = bench.get(&p).ok_or(MetricsError::MissingProportion(p))?;
        let mut per_class_acc = [None; NUM_CLASSES];
        for (i, slot) in per_class_acc.iter_mut().enumerate() {
            *slot = m.per_class_acc[i].zip(b.per_class_acc[i]).map(|(x, y)| x - y);
        }
        rows.push(DeviationRow { proportion: p, oa: m.oa - b.oa, oa7: m.oa7 - b.oa7, miou: m.miou - b.miou, per_class_acc });
    }
    if rows.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let n = rows.len() as f64;
    let mut average = DeviationRow {
        proportion: 0,
        oa: rows.iter().map(|r| r.oa).sum::<f64>() / n,
        oa7: rows.iter().map(|r| r.oa7).sum::<f64>() / n,
        miou: rows.iter().map(|r| r.miou).sum::<f64>() / n,
        per_class_acc: [None; NUM_CLASSES],
    };
    for i in 0..NUM_CLASSES {
        let v: Vec<f64> = rows.iter().filter_map(|r| r.per_class_acc[i]).collect();
        average.per_class_acc[i] = (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    }
    Ok(DeviationTable { range, rows, average })
}

fn opt4(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Aligned text table, one row per proportion plus the average.
pub fn format_deviation_table(t: &DeviationTable) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:>10} {:>8} {:>8} {:>8}", "proportion", "miou", "oa", "oa7");
    for c in SemanticClass::ALL {
        let _ = write!(s, " {:>8}", c.name());
    }
    s.push('\n');
    let mut line = |label: String, r: &DeviationRow| {
        let _ = write!(s, "{label:>10} {:>8.4} {:>8.4} {:>8.4}", r.miou, r.oa, r.oa7);
        for v in r.per_class_acc {
            let _ = write!(s, " {:>8}", opt4(v));
        }
        s.push('\n');
    };
    for r in &t.rows {
        line(format!("{}%", r.proportion), r);
    }
    line(format!("avg{}-{}", t.range.0, t.range.1), &t.average);
    s
}

/// Report as TOML text with every metric at four decimals. Undefined
/// per-class values are omitted.
pub fn format_report(r: &EvalReport, proportion: Option<u32>, epoch: Option<u32>) -> String {
    let mut s = String::new();
    if let Some(p) = proportion {
        let _ = writeln!(s, "proportion = {p}");
    }
    if let Some(e) = epoch {
        let _ = writeln!(s, "epoch = {e}");
    }
    let _ = writeln!(s, "oa = {:.4}\noa7 = {:.4}\nmiou = {:.4}", r.oa, r.oa7, r.miou);
    for c in SemanticClass::ALL {
        let _ = writeln!(s, "\n[classes.{}]", c.name());
        if let Some(v) = r.per_class_acc[c as usize] {
            let _ = writeln!(s, "acc = {v:.4}");
        }
        if let Some(v) = r.per_class_iou[c as usize] {
            let _ = writeln!(s, "iou = {v:.4}");
        }
    }
    s
}

#[derive(Debug, Deserialize)]
struct ReportDoc {
    proportion: Option<u32>,
    epoch: Option<u32>,
    oa: f64,
    oa7: f64,
    miou: f64,
    #[serde(default)]
    classes: BTreeMap<String, ClassDoc>,
}

#[derive(Debug, Deserialize)]
struct ClassDoc {
    acc: Option<f64>,
    iou: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed report: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedReport {
    pub proportion: Option<u32>,
    pub epoch: Option<u32>,
    pub report: EvalReport,
}

pub fn parse_report(text: &str, path: &Path) -> Result<LoadedReport, ReportError> {
    let doc: ReportDoc =
        toml::from_str(text).map_err(|e| ReportError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    let mut report = EvalReport {
        oa: doc.oa,
        oa7: doc.oa7,
        miou: doc.miou,
        per_class_acc: [None; NUM_CLASSES],
        per_class_iou: [None; NUM_CLASSES],
    };
    for (name, c) in doc.classes {
        let class = SemanticClass::ALL.iter().find(|k| k.name() == name).ok_or_else(|| ReportError::Format {
            path: path.to_path_buf(),
            message: format!("unknown class {name:?}"),
        })?;
        report.per_class_acc[*class as usize] = c.acc;
        report.per_class_iou[*class as usize] = c.iou;
    }
    Ok(LoadedReport { proportion: doc.proportion, epoch: doc.epoch, report })
}

pub fn load_report(path: &Path) -> Result<LoadedReport, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })?;
    parse_report(&text, path)
}
