//! Mixed / benchmark training-set construction, block partitioning, and
//! S3DIS-style export.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{io_err, load_cloud, CloudError, PointCloud, PointRecord, Rgb};
use crate::geometry::{Point2, Vec3};
use crate::labels::{SemanticClass, NUM_CLASSES};
use crate::seed::{stream, tag};

pub const DEFAULT_TOTAL_SCENES: usize = 44;
pub const DEFAULT_REPLICATES: u32 = 3;
pub const DEFAULT_POINTS_PER_BLOCK: usize = 4096;
pub const DEFAULT_BLOCK_SIZE: f64 = 1.0;

/// 0, 5, ..., 100.
pub fn all_proportions() -> Vec<u32> {
    (0..=100).step_by(5).collect()
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{pool} pool exhausted: need {needed} scenes, have {available}")]
    PoolExhausted { pool: &'static str, needed: usize, available: usize },
    #[error("proportion {0} is not one of 0, 5, ..., 100")]
    BadProportion(u32),
    #[error("no benchmark defined at {0}% (benchmarks exist for 5-95%)")]
    NoBenchmark(u32),
    #[error("duplicate scene id {0:?}")]
    DuplicateId(String),
    #[error("unknown scene id {0:?}")]
    UnknownScene(String),
    #[error("scene {0:?} has no points")]
    EmptyScene(String),
    #[error("empty cloud")]
    EmptyCloud,
    #[error("invalid block parameters: {0}")]
    InvalidBlocks(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

fn format_err(path: &Path, e: impl ToString) -> DatasetError {
    DatasetError::Format { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub id: String,
    pub source: Source,
    pub path: PathBuf,
    pub point_count: usize,
}

impl SceneEntry {
    /// Entry for an existing point file; the point count is read from it.
    pub fn from_file(id: impl Into<String>, source: Source, path: &Path) -> Result<Self, DatasetError> {
        let id = id.into();
        let point_count = count_points(path)?;
        if point_count == 0 {
            return Err(DatasetError::EmptyScene(id));
        }
        Ok(Self { id, source, path: path.to_path_buf(), point_count })
    }
}

fn count_points(path: &Path) -> Result<usize, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut n = 0;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            n += 1;
        }
    }
    Ok(n)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolEntryDoc {
    id: String,
    source: Source,
    path: PathBuf,
    point_count: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolDoc {
    #[serde(default)]
    scenes: Vec<PoolEntryDoc>,
}

#[derive(Debug, Serialize)]
struct PoolOut<'a> {
    scenes: &'a [SceneEntry],
}

/// Reads a pool manifest (`[[scenes]]` with `id`, `source`, `path`, optional
/// `point_count`). Relative paths resolve against the manifest directory;
/// missing counts are read from the files.
pub fn load_pool(path: &Path) -> Result<Vec<SceneEntry>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc: PoolDoc = toml::from_str(&text).map_err(|e| format_err(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(doc.scenes.len());
    for e in doc.scenes {
        if !seen.insert(e.id.clone()) {
            return Err(DatasetError::DuplicateId(e.id));
        }
        let file = base.join(&e.path);
        let entry = match e.point_count {
            Some(0) => return Err(DatasetError::EmptyScene(e.id)),
            Some(point_count) => {
                fs::metadata(&file).map_err(io_err(&file))?;
                SceneEntry { id: e.id, source: e.source, path: file, point_count }
            }
            None => SceneEntry::from_file(e.id, e.source, &file)?,
        };
        out.push(entry);
    }
    Ok(out)
}

pub fn save_pool(entries: &[SceneEntry], path: &Path) -> Result<(), DatasetError> {
    let text = toml::to_string(&PoolOut { scenes: entries }).map_err(|e| format_err(path, e))?;
    write_file(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixPlan {
    pub proportion: u32,
    pub total_scenes: usize,
    pub rng_seed: u64,
    pub replicate_index: u32,
    pub synthetic_picks: Vec<String>,
    pub real_picks: Vec<String>,
}

impl MixPlan {
    pub fn name(&self) -> String {
        format!("mix_p{:03}_r{}", self.proportion, self.replicate_index)
    }
}

/// The synthetic-removed twin of a [`MixPlan`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkPlan {
    pub derived_from: String,
    pub proportion: u32,
    pub rng_seed: u64,
    pub replicate_index: u32,
    pub real_picks: Vec<String>,
    pub synthetic_picks: Vec<String>,
}

impl BenchmarkPlan {
    pub fn name(&self) -> String {
        format!("bench_p{:03}_r{}", self.proportion, self.replicate_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExperimentPlan {
    Mix(MixPlan),
    Benchmark(BenchmarkPlan),
}

impl ExperimentPlan {
    pub fn name(&self) -> String {
        match self {
            ExperimentPlan::Mix(p) => p.name(),
            ExperimentPlan::Benchmark(p) => p.name(),
        }
    }

    pub fn proportion(&self) -> u32 {
        match self {
            ExperimentPlan::Mix(p) => p.proportion,
            ExperimentPlan::Benchmark(p) => p.proportion,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        match self {
            ExperimentPlan::Mix(p) => p.rng_seed,
            ExperimentPlan::Benchmark(p) => p.rng_seed,
        }
    }

    pub fn replicate_index(&self) -> u32 {
        match self {
            ExperimentPlan::Mix(p) => p.replicate_index,
            ExperimentPlan::Benchmark(p) => p.replicate_index,
        }
    }

    pub fn synthetic_picks(&self) -> &[String] {
        match self {
            ExperimentPlan::Mix(p) => &p.synthetic_picks,
            ExperimentPlan::Benchmark(p) => &p.synthetic_picks,
        }
    }

    pub fn real_picks(&self) -> &[String] {
        match self {
            ExperimentPlan::Mix(p) => &p.real_picks,
            ExperimentPlan::Benchmark(p) => &p.real_picks,
        }
    }

    /// Synthetic picks followed by real picks.
    pub fn scene_ids(&self) -> impl Iterator<Item = &String> {
        self.synthetic_picks().iter().chain(self.real_picks())
    }
}

/// `round-half-up(proportion · total / 100)`.
pub fn synthetic_count(proportion: u32, total: usize) -> usize {
    (proportion as usize * total + 50) / 100
}

fn check_proportion(p: u32) -> Result<(), DatasetError> {
    if p > 100 || !p.is_multiple_of(5) {
        return Err(DatasetError::BadProportion(p));
    }
    Ok(())
}

fn pick(
    pool: &[SceneEntry],
    name: &'static str,
    needed: usize,
    keys: &[u64],
    rng_seed: u64,
) -> Result<Vec<String>, DatasetError> {
    if needed > pool.len() {
        return Err(DatasetError::PoolExhausted { pool: name, needed, available: pool.len() });
    }
    let mut rng = stream(rng_seed, keys);
    let mut chosen = index::sample(&mut rng, pool.len(), needed).into_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| pool[i].id.clone()).collect())
}

fn check_disjoint(real: &[SceneEntry], synthetic: &[SceneEntry]) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    for e in real.iter().chain(synthetic) {
        if !seen.insert(e.id.as_str()) {
            return Err(DatasetError::DuplicateId(e.id.clone()));
        }
    }
    Ok(())
}

/// Draws `round-half-up(p·total/100)` synthetic and the remaining real scenes
/// without replacement. Each pool has its own stream keyed by
/// `(rng_seed, proportion, replicate_index)`; picks are listed in pool order.
pub fn build_mix(
    real_pool: &[SceneEntry],
    synthetic_pool: &[SceneEntry],
    proportion: u32,
    total: usize,
    rng_seed: u64,
    replicate_index: u32,
) -> Result<MixPlan, DatasetError> {
    check_proportion(proportion)?;
    check_disjoint(real_pool, synthetic_pool)?;
    let n_syn = synthetic_count(proportion, total);
    let keys = |pool: &str| [tag("mix"), u64::from(proportion), u64::from(replicate_index), tag(pool)];
    let synthetic_picks = pick(synthetic_pool, "synthetic", n_syn, &keys("synthetic"), rng_seed)?;
    let real_picks = pick(real_pool, "real", total - n_syn, &keys("real"), rng_seed)?;
    Ok(MixPlan { proportion, total_scenes: total, rng_seed, replicate_index, synthetic_picks, real_picks })
}

pub fn build_benchmark(plan: &MixPlan) -> Result<BenchmarkPlan, DatasetError> {
    if plan.proportion == 0 || plan.proportion >= 100 {
        return Err(DatasetError::NoBenchmark(plan.proportion));
    }
    Ok(BenchmarkPlan {
        derived_from: plan.name(),
        proportion: plan.proportion,
        rng_seed: plan.rng_seed,
        replicate_index: plan.replicate_index,
        real_picks: plan.real_picks.clone(),
        synthetic_picks: Vec::new(),
    })
}

/// For each replicate: the mix plans at `proportions` in the given order,
/// then the benchmark twins of those strictly between 0 and 100.
pub fn plan_experiments(
    real_pool: &[SceneEntry],
    synthetic_pool: &[SceneEntry],
    proportions: &[u32],
    total: usize,
    replicates: u32,
    rng_seed: u64,
) -> Result<Vec<ExperimentPlan>, DatasetError> {
    let mut out = Vec::new();
    for r in 0..replicates {
        let mixes = proportions
            .iter()
            .map(|&p| build_mix(real_pool, synthetic_pool, p, total, rng_seed, r))
            .collect::<Result<Vec<_>, _>>()?;
        let benches = mixes
            .iter()
            .filter(|m| m.proportion > 0 && m.proportion < 100)
            .map(build_benchmark)
            .collect::<Result<Vec<_>, _>>()?;
        out.extend(mixes.into_iter().map(ExperimentPlan::Mix));
        out.extend(benches.into_iter().map(ExperimentPlan::Benchmark));
    }
    Ok(out)
}

/// All 21 proportions: 21 mix + 19 benchmark plans per replicate.
pub fn enumerate_experiments(
    real_pool: &[SceneEntry],
    synthetic_pool: &[SceneEntry],
    total: usize,
    replicates: u32,
    rng_seed: u64,
) -> Result<Vec<ExperimentPlan>, DatasetError> {
    plan_experiments(real_pool, synthetic_pool, &all_proportions(), total, replicates, rng_seed)
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanDoc {
    #[serde(default)]
    plans: Vec<ExperimentPlan>,
}

/// Plans as a TOML document with one `[[plans]]` table each.
pub fn format_experiment_plans(plans: &[ExperimentPlan]) -> String {
    toml::to_string(&PlanDoc { plans: plans.to_vec() }).expect("plans serialize to TOML")
}

pub fn save_experiment_plans(plans: &[ExperimentPlan], path: &Path) -> Result<(), DatasetError> {
    write_file(path, format_experiment_plans(plans).as_bytes())
}

pub fn load_experiment_plans(path: &Path) -> Result<Vec<ExperimentPlan>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc: PlanDoc = toml::from_str(&text).map_err(|e| format_err(path, e))?;
    Ok(doc.plans)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub cell: (i64, i64),
    pub origin: Point2,
    /// Index into the input cloud of each sampled point.
    pub source_indices: Vec<usize>,
    pub points: Vec<PointRecord>,
}

fn cell_index(v: f64, min: f64, size: f64) -> i64 {
    let mut i = ((v - min) / size).floor() as i64;
    // Pin the cell to the exact origin arithmetic used for the bounds.
    while v < min + i as f64 * size {
        i -= 1;
    }
    while v >= min + (i + 1) as f64 * size {
        i += 1;
    }
    i
}

/// Tiles the cloud with `block_size` squares anchored at its minimum (x, y)
/// and samples exactly `points_per_block` points from every nonempty cell:
/// without replacement when the cell holds enough points, otherwise all of
/// them plus uniform draws with replacement. Blocks come in (ix, iy) order.
pub fn partition_blocks(
    cloud: &PointCloud,
    block_size: f64,
    points_per_block: usize,
    rng_seed: u64,
) -> Result<Vec<Block>, DatasetError> {
    if !(block_size > 0.0) || !block_size.is_finite() {
        return Err(DatasetError::InvalidBlocks(format!("block size must be positive, got {block_size}")));
    }
    if points_per_block == 0 {
        return Err(DatasetError::InvalidBlocks("points per block must be at least 1".into()));
    }
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let min_x = cloud.points.iter().map(|p| p.position.x).fold(f64::INFINITY, f64::min);
    let min_y = cloud.points.iter().map(|p| p.position.y).fold(f64::INFINITY, f64::min);

    let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = (cell_index(p.position.x, min_x, block_size), cell_index(p.position.y, min_y, block_size));
        cells.entry(key).or_default().push(i);
    }

    let blocks = cells
        .into_iter()
        .map(|((ix, iy), members)| {
            let mut rng = stream(rng_seed, &[tag("blocks"), ix as u64, iy as u64]);
            let n = members.len();
            let source_indices: Vec<usize> = if n >= points_per_block {
                let mut chosen = index::sample(&mut rng, n, points_per_block).into_vec();
                chosen.sort_unstable();
                chosen.into_iter().map(|k| members[k]).collect()
            } else {
                let mut all = members.clone();
                all.extend((n..points_per_block).map(|_| members[rng.random_range(0..n)]));
                all
            };
            Block {
                cell: (ix, iy),
                origin: Point2::new(min_x + ix as f64 * block_size, min_y + iy as f64 * block_size),
                points: source_indices.iter().map(|&k| cloud.points[k]).collect(),
                source_indices,
            }
        })
        .collect();
    Ok(blocks)
}

/// One line per sampled point: `block ix iy source x y z r g b label`.
pub fn write_blocks(blocks: &[Block], path: &Path) -> Result<(), DatasetError> {
    let mut text = String::new();
    for (bi, b) in blocks.iter().enumerate() {
        for (&src, p) in b.source_indices.iter().zip(&b.points) {
            let [r, g, bl] = p.color.0;
            let label = i64::from(p.label.unwrap_or(SemanticClass::Clutter).code());
            let _ = writeln!(
                text,
                "{bi} {} {} {src} {} {} {} {r} {g} {bl} {label}",
                b.cell.0, b.cell.1, p.position.x, p.position.y, p.position.z
            );
        }
    }
    write_file(path, text.as_bytes())
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path)).map_err(Into::into)
}

fn xyzrgb(p: &PointRecord, out: &mut String) {
    let [r, g, b] = p.color.0;
    let _ = writeln!(out, "{} {} {} {r} {g} {b}", p.position.x, p.position.y, p.position.z);
}

fn effective_label(p: &PointRecord) -> SemanticClass {
    p.label.unwrap_or(SemanticClass::Clutter)
}

/// Writes `<dir>/<id>/<id>.txt` and one `Annotations/<class>_<n>.txt` per
/// contiguous run of equal labels (unlabeled points count as clutter).
/// Returns the written paths.
pub fn export_scene(cloud: &PointCloud, id: &str, dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let scene_dir = dir.join(id);
    let ann_dir = scene_dir.join("Annotations");
    fs::create_dir_all(&ann_dir).map_err(io_err(&ann_dir))?;
    let mut written = Vec::new();

    let mut all = String::new();
    for p in &cloud.points {
        xyzrgb(p, &mut all);
    }
    let main = scene_dir.join(format!("{id}.txt"));
    write_file(&main, all.as_bytes())?;
    written.push(main);

    let mut run_counts = [0usize; NUM_CLASSES];
    let mut start = 0;
    while start < cloud.len() {
        let class = effective_label(&cloud.points[start]);
        let mut end = start + 1;
        while end < cloud.len() && effective_label(&cloud.points[end]) == class {
            end += 1;
        }
        run_counts[class as usize] += 1;
        let mut text = String::new();
        for p in &cloud.points[start..end] {
            xyzrgb(p, &mut text);
        }
        let path = ann_dir.join(format!("{}_{}.txt", class.name(), run_counts[class as usize]));
        write_file(&path, text.as_bytes())?;
        written.push(path);
        start = end;
    }
    Ok(written)
}

fn parse_xyzrgb(line: &str, path: &Path, lineno: usize) -> Result<(Vec3, Rgb), DatasetError> {
    let bad = |m: String| DatasetError::Cloud(CloudError::Parse { path: path.to_path_buf(), line: lineno, message: m });
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 6 {
        return Err(bad(format!("expected 6 columns, found {}", f.len())));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
    let chan = |s: &str| s.parse::<u8>().map_err(|e| bad(format!("{s:?}: {e}")));
    Ok((Vec3::new(num(f[0])?, num(f[1])?, num(f[2])?), Rgb([chan(f[3])?, chan(f[4])?, chan(f[5])?])))
}

/// Reads an exported scene directory back from its annotation files, in
/// file-name order. Fails if the annotation files do not account for every
/// point of the main scene file.
pub fn import_scene(scene_dir: &Path) -> Result<PointCloud, DatasetError> {
    let ann_dir = scene_dir.join("Annotations");
    let mut files: Vec<(SemanticClass, usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&ann_dir).map_err(io_err(&ann_dir))? {
        let path = entry.map_err(io_err(&ann_dir))?.path();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let (name, n) = stem.rsplit_once('_').ok_or_else(|| format_err(&path, "expected <class>_<n>.txt"))?;
        let n: usize = n.parse().map_err(|_| format_err(&path, "expected <class>_<n>.txt"))?;
        let class = SemanticClass::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| format_err(&path, format!("unknown class {name:?}")))?;
        files.push((class, n, path));
    }
    files.sort_by_key(|f| (f.0 as u8, f.1));

    let mut cloud = PointCloud::from_points(Vec::new());
    for (class, _, path) in files {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (pos, color) = parse_xyzrgb(line, &path, i + 1)?;
            cloud.points.push(PointRecord::new(pos).with_color(color).with_label(class));
        }
    }
    let name = scene_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default();
    let main = scene_dir.join(format!("{name}.txt"));
    let expected = count_points(&main)?;
    if expected != cloud.len() {
        return Err(format_err(
            scene_dir,
            format!("annotations hold {} points, scene file {expected}", cloud.len()),
        ));
    }
    Ok(cloud)
}

fn read_lines(path: &Path) -> Result<Vec<String>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

/// Labels of an exported scene in the order of its main `<scene>.txt`.
///
/// Runs of each class are numbered in point order, so at every position the
/// only candidates are the next unused run of each class; the one whose lines
/// continue the main file is taken.
pub fn scene_labels(scene_dir: &Path) -> Result<Vec<SemanticClass>, DatasetError> {
    let name = scene_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default();
    let main = read_lines(&scene_dir.join(format!("{name}.txt")))?;
    let ann_dir = scene_dir.join("Annotations");
    let mut runs: Vec<Vec<Vec<String>>> = vec![Vec::new(); NUM_CLASSES];
    for class in SemanticClass::ALL {
        for n in 1.. {
            let path = ann_dir.join(format!("{}_{n}.txt", class.name()));
            if !path.exists() {
                break;
            }
            runs[class as usize].push(read_lines(&path)?);
        }
    }
    let mut next = [0usize; NUM_CLASSES];
    let mut labels = Vec::with_capacity(main.len());
    while labels.len() < main.len() {
        let at = labels.len();
        let found = SemanticClass::ALL.into_iter().find(|&c| {
            runs[c as usize].get(next[c as usize]).is_some_and(|run| {
                !run.is_empty() && main.get(at..at + run.len()).is_some_and(|seg| seg == run.as_slice())
            })
        });
        let class = found.ok_or_else(|| format_err(scene_dir, format!("no annotation run matches point {}", at + 1)))?;
        let len = runs[class as usize][next[class as usize]].len();
        next[class as usize] += 1;
        labels.extend(std::iter::repeat_n(class, len));
    }
    Ok(labels)
}

#[derive(Debug, Serialize)]
struct ExportManifest<'a> {
    name: String,
    proportion: u32,
    rng_seed: u64,
    replicate_index: u32,
    synthetic_picks: &'a [String],
    real_picks: &'a [String],
    files: Vec<String>,
}

/// Exports every scene of `plan` under `out_dir` plus `plan.toml` recording
/// the plan parameters, picks, and written files (relative to `out_dir`).
pub fn export_dataset(plan: &ExperimentPlan, pool: &[SceneEntry], out_dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let by_id: HashMap<&str, &SceneEntry> = pool.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut written = Vec::new();
    for id in plan.scene_ids() {
        let entry = by_id.get(id.as_str()).ok_or_else(|| DatasetError::UnknownScene(id.clone()))?;
        let cloud = load_cloud(&entry.path)?;
        written.extend(export_scene(&cloud, id, out_dir)?);
    }
    let manifest_path = out_dir.join("plan.toml");
    let manifest = ExportManifest {
        name: plan.name(),
        proportion: plan.proportion(),
        rng_seed: plan.rng_seed(),
        replicate_index: plan.replicate_index(),
        synthetic_picks: plan.synthetic_picks(),
        real_picks: plan.real_picks(),
        files: written
            .iter()
            .map(|p| p.strip_prefix(out_dir).unwrap_or(p).to_string_lossy().replace('\\', "/"))
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| format_err(&manifest_path, e))?;
    write_file(&manifest_path, text.as_bytes())?;
    written.push(manifest_path);
    Ok(written)
}

/// Percentage of points per class (unlabeled points count as clutter).
pub fn class_proportions(cloud: &PointCloud) -> Result<[f64; NUM_CLASSES], DatasetError> {
    if cloud.is_empty() {
        return Err(DatasetError::EmptyCloud);
    }
    let counts = class_counts(cloud);
    let n = cloud.len() as f64;
    Ok(counts.map(|c| 100.0 * c as f64 / n))
}

pub fn class_counts(cloud: &PointCloud) -> [u64; NUM_CLASSES] {
    let mut counts = [0u64; NUM_CLASSES];
    for p in &cloud.points {
        counts[effective_label(p) as usize] += 1;
    }
    counts
}
