//! Scoring external predictions and comparing report sets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, PipelineError};
use crate::dataset::scene_labels;
use crate::metrics::{
    accumulate_into, deviation_table, load_report, select_best, ConfusionMatrix, DeviationTable, EvalReport,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    /// The selected epoch when predictions come in `epoch_<n>` directories.
    pub epoch: Option<u32>,
    pub report: EvalReport,
    pub epochs: Vec<(u32, EvalReport)>,
    pub points: u64,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut v: Vec<PathBuf> =
        fs::read_dir(dir).map_err(io_err(dir))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    v.sort();
    Ok(v)
}

fn epoch_of(path: &Path) -> Option<u32> {
    path.file_name()?.to_str()?.strip_prefix("epoch_")?.parse().ok()
}

/// Scores `pred`. Each `<scene>.txt` holds one line per point, either
/// `gt pred` or just `pred`; in the latter case ground truth comes from
/// `gt/<scene>/` (an exported scene) or `gt/<scene>.txt` (one label per line,
/// or point lines whose seventh column is the label). When `pred` contains
/// `epoch_<n>` subdirectories each is scored and the epoch with the highest
/// mIoU is reported.
pub fn evaluate(gt: Option<&Path>, pred: &Path) -> Result<EvalOutcome, PipelineError> {
    let epochs: Vec<(u32, PathBuf)> =
        sorted_entries(pred)?.into_iter().filter(|p| p.is_dir()).filter_map(|p| Some((epoch_of(&p)?, p))).collect();
    if epochs.is_empty() {
        let cm = confusion_for_dir(gt, pred)?;
        return Ok(EvalOutcome { epoch: None, report: EvalReport::from_confusion(&cm)?, epochs: Vec::new(), points: cm.total() });
    }
    let mut scored = Vec::new();
    let mut totals = BTreeMap::new();
    for (e, dir) in epochs {
        let cm = confusion_for_dir(gt, &dir)?;
        totals.insert(e, cm.total());
        scored.push((e, EvalReport::from_confusion(&cm)?));
    }
    scored.sort_by_key(|(e, _)| *e);
    let (epoch, report) = select_best(&scored)?.clone();
    Ok(EvalOutcome { epoch: Some(epoch), report, points: totals[&epoch], epochs: scored })
}

fn parse_ints(path: &Path) -> Result<Vec<Vec<i64>>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|t| {
                    t.parse::<i64>()
                        .map_err(|_| PipelineError::Runtime(format!("{}:{}: {t:?} is not an integer label", path.display(), i + 1)))
                })
                .collect()
        })
        .collect()
}

fn ground_truth(gt: &Path, scene: &str) -> Result<Vec<i64>, PipelineError> {
    let dir = gt.join(scene);
    if dir.is_dir() {
        return Ok(scene_labels(&dir)?.into_iter().map(|c| i64::from(c.code())).collect());
    }
    let file = gt.join(format!("{scene}.txt"));
    if !file.is_file() {
        return Err(PipelineError::Runtime(format!("no ground truth for scene {scene:?} under {}", gt.display())));
    }
    let text = fs::read_to_string(&file).map_err(io_err(&file))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#')) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let raw = match fields.len() {
            1 => fields[0],
            n if n >= 7 => fields[6],
            n => {
                return Err(PipelineError::Runtime(format!(
                    "{}:{}: expected 1 or at least 7 columns, found {n}",
                    file.display(),
                    i + 1
                )))
            }
        };
        let v: i64 = raw
            .parse()
            .map_err(|_| PipelineError::Runtime(format!("{}:{}: bad label {raw:?}", file.display(), i + 1)))?;
        // Unlabeled points count as clutter, as in exports.
        labels.push(if v == -1 { 7 } else { v });
    }
    Ok(labels)
}

fn confusion_for_dir(gt: Option<&Path>, dir: &Path) -> Result<ConfusionMatrix, PipelineError> {
    let files: Vec<PathBuf> =
        sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt")).collect();
    if files.is_empty() {
        return Err(PipelineError::Runtime(format!("no prediction files in {}", dir.display())));
    }
    let mut cm = ConfusionMatrix::new();
    for file in files {
        let scene = file.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let rows = parse_ints(&file)?;
        let width = rows.first().map_or(1, Vec::len);
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != width || !(1..=2).contains(&r.len())) {
            return Err(PipelineError::Runtime(format!(
                "{}: line {} has {} columns; expected `gt pred` or `pred` on every line",
                file.display(),
                i + 1,
                rows[i].len()
            )));
        }
        let wrap = |e| PipelineError::Runtime(format!("{}: {e}", file.display()));
        if width == 2 {
            accumulate_into(&mut cm, rows.iter().map(|r| r[0]), rows.iter().map(|r| r[1]), 0).map_err(wrap)?;
        } else {
            let gt_dir = gt.ok_or_else(|| {
                PipelineError::Runtime(format!("{}: single-column predictions need --gt", file.display()))
            })?;
            let labels = ground_truth(gt_dir, &scene)?;
            accumulate_into(&mut cm, labels, rows.iter().map(|r| r[0]), 0).map_err(wrap)?;
        }
    }
    Ok(cm)
}

/// Reports in `dir` (`*.toml` with a `proportion` key), averaged over
/// replicates sharing a proportion.
pub fn load_report_dir(dir: &Path) -> Result<BTreeMap<u32, EvalReport>, PipelineError> {
    let mut groups: BTreeMap<u32, Vec<EvalReport>> = BTreeMap::new();
    for path in sorted_entries(dir)?.into_iter().filter(|p| p.extension().is_some_and(|e| e == "toml")) {
        let loaded = load_report(&path)?;
        let p = loaded
            .proportion
            .ok_or_else(|| PipelineError::Runtime(format!("{}: report has no proportion", path.display())))?;
        groups.entry(p).or_default().push(loaded.report);
    }
    groups.into_iter().map(|(p, rs)| Ok((p, EvalReport::average(&rs)?))).collect()
}

pub fn deviation_from_dirs(mix: &Path, bench: &Path, range: (u32, u32)) -> Result<DeviationTable, PipelineError> {
    Ok(deviation_table(&load_report_dir(mix)?, &load_report_dir(bench)?, range)?)
}
