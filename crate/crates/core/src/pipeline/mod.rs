//! File-based pipeline: plan → scan → annotate → colorize → mix → blocks →
//! report. Every stage reads its inputs from, and writes its outputs under,
//! the output root, so any stage can be re-run on its own.
//!
//! ```text
//! <out>/plan/stations.toml
//! <out>/scan/<room>.txt            (+ <room>.components.txt in debug mode)
//! <out>/annotate/<room>.txt
//! <out>/colorize/<room>.txt
//! <out>/mix/{plans.toml, pools.toml, scenes/<id>/...}
//! <out>/blocks/<id>.txt
//! <out>/report/{class_proportions.txt, mix_counts.txt}
//! <out>/run_manifest.toml
//! ```

mod eval;

pub use eval::{deviation_from_dirs, evaluate, load_report_dir, EvalOutcome};

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::{sample_component_clouds, transfer_colors, AnnotateError, AnnotationConfig, LabelTransfer};
use crate::cloud::{load_cloud, save_cloud, save_component_sidecar, CloudError};
use crate::dataset::{
    self, class_counts, export_dataset, export_scene, import_scene, load_experiment_plans, load_pool,
    partition_blocks, plan_experiments, save_experiment_plans, write_blocks, DatasetError, ExperimentPlan,
    SceneEntry, Source,
};
use crate::labels::{SemanticClass, NUM_CLASSES};
use crate::metrics::{MetricsError, ReportError};
use crate::planner::{load_plans, plan_stations, save_plans, PlannerConfig, PlannerError};
use crate::scanner::{scan_rooms, IndexError, ScanOptions, ScannerConfig, TriangleIndex};
use crate::scene::{load_scene, scene_files, SceneError};
use crate::seed::{derive_seed, tag};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "run_manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingConfig {
    pub total: usize,
    pub proportions: Vec<u32>,
    pub replicates: u32,
    /// Overrides the pipeline seed for scene selection when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Pool manifest of real scenes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_pool: Option<PathBuf>,
    pub block_size: f64,
    pub points_per_block: usize,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            total: dataset::DEFAULT_TOTAL_SCENES,
            proportions: dataset::all_proportions(),
            replicates: dataset::DEFAULT_REPLICATES,
            seed: None,
            real_pool: None,
            block_size: dataset::DEFAULT_BLOCK_SIZE,
            points_per_block: dataset::DEFAULT_POINTS_PER_BLOCK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scene manifest. Relative paths in a config file resolve against the
    /// file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 picks the number of cores.
    pub threads: usize,
    /// Keep true component ids next to scanned points.
    pub debug: bool,
    pub verbosity: String,
    pub planner: PlannerConfig,
    pub scanner: ScannerConfig,
    pub annotation: AnnotationConfig,
    pub mixing: MixingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scene: None,
            output: PathBuf::from("spc_out"),
            seed: 0,
            threads: 0,
            debug: false,
            verbosity: "info".into(),
            planner: PlannerConfig::default(),
            scanner: ScannerConfig::default(),
            annotation: AnnotationConfig::default(),
            mixing: MixingConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {}", join(.0))]
    Invalid(Vec<FieldError>),
    #[error("missing {}: run {stage} first", .path.display())]
    Missing { stage: &'static str, path: PathBuf },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn join(errors: &[FieldError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl PipelineError {
    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Parse(_) | PipelineError::Invalid(_) => 1,
            _ => 2,
        }
    }

    /// The individual messages, one `error:` line each.
    pub fn lines(&self) -> Vec<String> {
        match self {
            PipelineError::Invalid(errors) => errors.iter().map(ToString::to_string).collect(),
            other => vec![other.to_string()],
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Sets `key.path = value` in a TOML table; `value` is read as a TOML value
/// and falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), PipelineError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::Parse(format!("override {assignment:?} is not key=value")))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(PipelineError::Parse(format!("override {assignment:?} has an empty key")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| PipelineError::Parse(format!("override {assignment:?}: {part} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// A parsed configuration: `snapshot` as written (plus overrides), and
/// `config` with every relative path resolved.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub snapshot: PipelineConfig,
    pub config: PipelineConfig,
    /// Directory relative config paths were resolved against.
    pub base: PathBuf,
}

impl LoadedConfig {
    /// Parses `path` (an absent path means the empty document) and applies
    /// `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, PipelineError> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(io_err(p))?,
            None => String::new(),
        };
        let origin = path.map_or_else(|| "<defaults>".to_string(), |p| p.display().to_string());
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| PipelineError::Parse(format!("{origin}: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let snapshot: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Parse(format!("{origin}: {}", e.message())))?;
        let base = path.and_then(Path::parent).unwrap_or(Path::new(""));
        Ok(Self { config: resolve_paths(&snapshot, base), snapshot, base: base.to_path_buf() })
    }

    /// Replaces the output root (taken relative to the working directory).
    pub fn set_output(&mut self, out: &Path) {
        self.snapshot.output = out.to_path_buf();
        self.config.output = out.to_path_buf();
    }
}

fn resolve_paths(cfg: &PipelineConfig, base: &Path) -> PipelineConfig {
    let mut c = cfg.clone();
    let fix = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    c.scene = c.scene.as_deref().map(fix);
    c.output = fix(&c.output);
    c.annotation.reference_cloud = c.annotation.reference_cloud.as_deref().map(fix);
    c.mixing.real_pool = c.mixing.real_pool.as_deref().map(fix);
    c
}

/// Every field checked against its module's invariants; empty when valid.
pub fn validate_config(cfg: &PipelineConfig) -> Vec<FieldError> {
    let mut out = Vec::new();
    let mut push = |field: String, message: String| out.push(FieldError { field, message });
    for (f, m) in cfg.planner.problems() {
        push(format!("planner.{f}"), m);
    }
    for (f, m) in cfg.scanner.problems() {
        push(format!("scanner.{f}"), m);
    }
    for (f, m) in cfg.annotation.problems() {
        push(format!("annotation.{f}"), m);
    }
    if let Err(e) = cfg.annotation.transform() {
        push("annotation.rigid_transform".into(), e.to_string());
    }
    let m = &cfg.mixing;
    if m.total < 1 {
        push("mixing.total".into(), "must be >= 1".into());
    }
    if m.replicates < 1 {
        push("mixing.replicates".into(), "must be >= 1".into());
    }
    if m.proportions.is_empty() {
        push("mixing.proportions".into(), "must not be empty".into());
    }
    for p in &m.proportions {
        if *p > 100 || p % 5 != 0 {
            push("mixing.proportions".into(), format!("{p} is not one of 0, 5, ..., 100"));
        }
    }
    if !(m.block_size.is_finite() && m.block_size > 0.0) {
        push("mixing.block_size".into(), format!("must be > 0, found {}", m.block_size));
    }
    if m.points_per_block < 1 {
        push("mixing.points_per_block".into(), "must be >= 1".into());
    }
    if !["error", "warn", "info", "debug", "trace"].contains(&cfg.verbosity.as_str()) {
        push("verbosity".into(), format!("must be one of error, warn, info, debug, trace; found {:?}", cfg.verbosity));
    }
    for (field, path) in [
        ("scene", &cfg.scene),
        ("annotation.reference_cloud", &cfg.annotation.reference_cloud),
        ("mixing.real_pool", &m.real_pool),
    ] {
        if let Some(p) = path {
            if !p.is_file() {
                push(field.into(), format!("file not found: {}", p.display()));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Plan,
    Scan,
    Annotate,
    Colorize,
    Mix,
    Blocks,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Plan, Stage::Scan, Stage::Annotate, Stage::Colorize, Stage::Mix, Stage::Blocks, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Plan => "plan",
            Stage::Scan => "scan",
            Stage::Annotate => "annotate",
            Stage::Colorize => "colorize",
            Stage::Mix => "mix",
            Stage::Blocks => "blocks",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub inputs: Vec<FileHash>,
    /// One entry per file in the stage directory; subdirectories are hashed
    /// as a whole (sha256 over the sorted `path sha256` lines of their files).
    pub outputs: Vec<FileHash>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: PipelineConfig,
    #[serde(default)]
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| PipelineError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let text = toml::to_string(self).map_err(|e| PipelineError::Runtime(format!("serializing manifest: {e}")))?;
        fs::write(path, text).map_err(io_err(path))
    }

    /// Replaces the record of the same stage or appends a new one.
    pub fn record(&mut self, entry: StageRecord) {
        match self.stages.iter_mut().find(|s| s.name == entry.name) {
            Some(slot) => *slot = entry,
            None => self.stages.push(entry),
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let mut f = fs::File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Files under `dir`, recursively, sorted by path.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let path = entry.map_err(io_err(&d))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn rel(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn hash_entry(path: &Path, root: &Path) -> Result<FileHash, PipelineError> {
    let sha256 = if path.is_dir() {
        let mut listing = String::new();
        for f in list_files(path)? {
            let _ = writeln!(listing, "{} {}", rel(&f, path), sha256_file(&f)?);
        }
        hex::encode(Sha256::digest(listing.as_bytes()))
    } else {
        sha256_file(path)?
    };
    Ok(FileHash { path: rel(path, root), sha256 })
}

fn hash_outputs(stage_dir: &Path, root: &Path) -> Result<Vec<FileHash>, PipelineError> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(stage_dir).map_err(io_err(stage_dir))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    entries.iter().map(|p| hash_entry(p, root)).collect()
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Executes pipeline stages for one resolved configuration.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub snapshot: PipelineConfig,
    base: PathBuf,
}

impl Pipeline {
    /// Validates the configuration.
    pub fn new(loaded: LoadedConfig) -> Result<Self, PipelineError> {
        let errors = validate_config(&loaded.config);
        if !errors.is_empty() {
            return Err(PipelineError::Invalid(errors));
        }
        Ok(Self { config: loaded.config, snapshot: loaded.snapshot, base: loaded.base })
    }

    pub fn out(&self) -> &Path {
        &self.config.output
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out().join(stage.name())
    }

    fn manifest_path(&self) -> PathBuf {
        self.out().join(MANIFEST_FILE)
    }

    fn fresh_manifest(&self) -> RunManifest {
        RunManifest { version: VERSION.to_string(), config: self.snapshot.clone(), stages: Vec::new() }
    }

    /// Runs one stage and records it in the run manifest.
    pub fn run_stage(&self, stage: Stage) -> Result<StageRecord, PipelineError> {
        let mut manifest = match self.manifest_path() {
            p if p.is_file() => RunManifest::load(&p)?,
            _ => self.fresh_manifest(),
        };
        manifest.version = VERSION.to_string();
        manifest.config = self.snapshot.clone();
        let record = self.execute(stage)?;
        manifest.record(record.clone());
        manifest.save(&self.manifest_path())?;
        Ok(record)
    }

    /// All seven stages in order; the manifest is rewritten from scratch.
    pub fn run_all(&self) -> Result<RunManifest, PipelineError> {
        let mut manifest = self.fresh_manifest();
        for stage in Stage::ALL {
            manifest.record(self.execute(stage)?);
            manifest.save(&self.manifest_path())?;
        }
        Ok(manifest)
    }

    fn execute(&self, stage: Stage) -> Result<StageRecord, PipelineError> {
        let started = Instant::now();
        let dir = self.stage_dir(stage);
        let inputs = self.check_inputs(stage)?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        log::info!("stage {stage}: start");
        match stage {
            Stage::Plan => self.plan(&dir)?,
            Stage::Scan => self.scan(&dir)?,
            Stage::Annotate => self.annotate(&dir)?,
            Stage::Colorize => self.colorize(&dir)?,
            Stage::Mix => self.mix(&dir)?,
            Stage::Blocks => self.blocks(&dir)?,
            Stage::Report => self.report(&dir)?,
        }
        let record = StageRecord {
            name: stage.name().to_string(),
            seconds: started.elapsed().as_secs_f64(),
            inputs: inputs.iter().map(|p| self.hash_input(p)).collect::<Result<_, _>>()?,
            outputs: hash_outputs(&dir, self.out())?,
        };
        log::info!("stage {stage}: done in {:.2} s", record.seconds);
        Ok(record)
    }

    /// Inputs from earlier stages are named relative to the output root,
    /// everything else relative to the config directory, so the manifest does
    /// not depend on the working directory.
    fn hash_input(&self, path: &Path) -> Result<FileHash, PipelineError> {
        let root = if path.starts_with(self.out()) { self.out() } else { &self.base };
        hash_entry(path, root)
    }

    fn scene_path(&self) -> Result<&Path, PipelineError> {
        self.config.scene.as_deref().ok_or_else(|| {
            PipelineError::Invalid(vec![FieldError { field: "scene".into(), message: "required by this stage".into() }])
        })
    }

    fn require(&self, stage: Stage, path: PathBuf) -> Result<PathBuf, PipelineError> {
        if path.exists() {
            Ok(path)
        } else {
            Err(PipelineError::Missing { stage: stage.name(), path })
        }
    }

    fn stations_file(&self) -> PathBuf {
        self.stage_dir(Stage::Plan).join("stations.toml")
    }

    fn room_names(&self) -> Result<Vec<String>, PipelineError> {
        let path = self.require(Stage::Plan, self.stations_file())?;
        Ok(load_plans(&path)?.into_iter().map(|p| p.room_name).collect())
    }

    fn room_files(&self, stage: Stage) -> Result<Vec<PathBuf>, PipelineError> {
        self.room_names()?
            .iter()
            .map(|r| self.require(stage, self.stage_dir(stage).join(format!("{r}.txt"))))
            .collect()
    }

    /// Upstream files a stage reads; fails with the stage to run first.
    fn check_inputs(&self, stage: Stage) -> Result<Vec<PathBuf>, PipelineError> {
        let scene = || -> Result<Vec<PathBuf>, PipelineError> { Ok(scene_files(self.scene_path()?)?) };
        let mut inputs = Vec::new();
        match stage {
            Stage::Plan => inputs.extend(scene()?),
            Stage::Scan => {
                inputs.push(self.require(Stage::Plan, self.stations_file())?);
                inputs.extend(scene()?);
            }
            Stage::Annotate => {
                inputs.extend(self.room_files(Stage::Scan)?);
                inputs.extend(scene()?);
            }
            Stage::Colorize => {
                inputs.extend(self.room_files(Stage::Annotate)?);
                inputs.extend(self.config.annotation.reference_cloud.clone());
            }
            Stage::Mix => {
                inputs.extend(self.room_files(Stage::Colorize)?);
                inputs.extend(self.config.mixing.real_pool.clone());
            }
            Stage::Blocks | Stage::Report => {
                let mix = self.stage_dir(Stage::Mix);
                inputs.push(self.require(Stage::Mix, mix.join("plans.toml"))?);
                inputs.push(self.require(Stage::Mix, mix.join("pools.toml"))?);
                inputs.push(self.require(Stage::Mix, mix.join("scenes"))?);
            }
        }
        Ok(inputs)
    }

    fn plan(&self, dir: &Path) -> Result<(), PipelineError> {
        let scene = load_scene(self.scene_path()?)?;
        let plans = scene
            .rooms
            .iter()
            .map(|room| {
                let seed = self.config.planner.rng_seed.unwrap_or_else(|| {
                    derive_seed(self.config.seed, &[tag("plan"), tag(&room.name)])
                });
                let plan = plan_stations(room, &self.config.planner, seed)?;
                log::info!(
                    "room {}: {} station(s), {} iteration(s), converged: {}",
                    room.name,
                    plan.stations.len(),
                    plan.iterations_used,
                    plan.converged
                );
                Ok(plan)
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        save_plans(&plans, &dir.join("stations.toml"))?;
        Ok(())
    }

    fn scan(&self, dir: &Path) -> Result<(), PipelineError> {
        let scene = load_scene(self.scene_path()?)?;
        let plans = load_plans(&self.stations_file())?;
        let index = TriangleIndex::build(&scene)?;
        let opts = ScanOptions { rng_seed: derive_seed(self.config.seed, &[tag("scan")]), debug: self.config.debug };
        let clouds = scan_rooms(&index, &plans, &self.config.scanner, opts);
        let ids = scene.component_ids();
        for (plan, cloud) in plans.iter().zip(&clouds) {
            log::info!("room {}: {} points", plan.room_name, cloud.len());
            save_cloud(cloud, &dir.join(format!("{}.txt", plan.room_name)))?;
            if self.config.debug {
                save_component_sidecar(cloud, &ids, &dir.join(format!("{}.components.txt", plan.room_name)))?;
            }
        }
        Ok(())
    }

    fn annotate(&self, dir: &Path) -> Result<(), PipelineError> {
        let scene = load_scene(self.scene_path()?)?;
        let a = &self.config.annotation;
        let seed = derive_seed(self.config.seed, &[tag("annotate")]);
        let transfer = LabelTransfer::new(&sample_component_clouds(&scene, a.sample_density_per_m2, seed))?;
        for room in self.room_names()? {
            let source = load_cloud(&self.stage_dir(Stage::Scan).join(format!("{room}.txt")))?;
            save_cloud(&transfer.apply(&source, a.label_threshold_m), &dir.join(format!("{room}.txt")))?;
        }
        Ok(())
    }

    fn colorize(&self, dir: &Path) -> Result<(), PipelineError> {
        let a = &self.config.annotation;
        let reference = a.reference_cloud.as_deref().map(load_cloud).transpose()?;
        let transform = a.transform()?;
        if reference.is_none() {
            log::info!("no reference cloud configured: keeping consistent component colors");
        }
        for room in self.room_names()? {
            let labeled = load_cloud(&self.stage_dir(Stage::Annotate).join(format!("{room}.txt")))?;
            let colored = match &reference {
                Some(r) => transfer_colors(&labeled, r, a.color_threshold_m, transform.as_ref())?,
                None => labeled,
            };
            save_cloud(&colored, &dir.join(format!("{room}.txt")))?;
        }
        Ok(())
    }

    fn pools(&self) -> Result<(Vec<SceneEntry>, Vec<SceneEntry>), PipelineError> {
        let synthetic = self
            .room_names()?
            .iter()
            .map(|r| {
                let path = self.stage_dir(Stage::Colorize).join(format!("{r}.txt"));
                SceneEntry::from_file(format!("syn_{r}"), Source::Synthetic, &path)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let real = match &self.config.mixing.real_pool {
            Some(p) => load_pool(p)?,
            None => Vec::new(),
        };
        Ok((real, synthetic))
    }

    /// The configured experiment plans over the current pools.
    pub fn experiment_plans(&self) -> Result<Vec<ExperimentPlan>, PipelineError> {
        let (real, synthetic) = self.pools()?;
        let m = &self.config.mixing;
        let seed = m.seed.unwrap_or(self.config.seed);
        Ok(plan_experiments(&real, &synthetic, &m.proportions, m.total, m.replicates, seed)?)
    }

    /// Exports every plan into `<dir>/<plan name>/`.
    pub fn export_plans(&self, dir: &Path) -> Result<usize, PipelineError> {
        let (real, synthetic) = self.pools()?;
        let pool: Vec<SceneEntry> = synthetic.into_iter().chain(real).collect();
        let plans = self.experiment_plans()?;
        for plan in &plans {
            export_dataset(plan, &pool, &dir.join(plan.name()))?;
        }
        Ok(plans.len())
    }

    fn mix(&self, dir: &Path) -> Result<(), PipelineError> {
        let (real, synthetic) = self.pools()?;
        let plans = self.experiment_plans()?;
        save_experiment_plans(&plans, &dir.join("plans.toml"))?;

        let summary = PoolSummary {
            scenes: synthetic
                .iter()
                .chain(&real)
                .map(|e| PoolSummaryEntry { id: e.id.clone(), source: e.source, point_count: e.point_count })
                .collect(),
        };
        let pools_path = dir.join("pools.toml");
        let text = toml::to_string(&summary).map_err(|e| PipelineError::Runtime(format!("serializing pools: {e}")))?;
        fs::write(&pools_path, text).map_err(io_err(&pools_path))?;

        let used: std::collections::HashSet<&String> = plans.iter().flat_map(|p| p.scene_ids()).collect();
        let scenes = dir.join("scenes");
        fs::create_dir_all(&scenes).map_err(io_err(&scenes))?;
        for e in synthetic.iter().chain(&real).filter(|e| used.contains(&e.id)) {
            export_scene(&load_cloud(&e.path)?, &e.id, &scenes)?;
        }
        log::info!("{} plan(s) over {} exported scene(s)", plans.len(), used.len());
        Ok(())
    }

    fn exported_scenes(&self) -> Result<Vec<(String, PathBuf)>, PipelineError> {
        let scenes = self.stage_dir(Stage::Mix).join("scenes");
        let mut out: Vec<(String, PathBuf)> = fs::read_dir(&scenes)
            .map_err(io_err(&scenes))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .map(|p| (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), p))
            .collect();
        out.sort();
        Ok(out)
    }

    fn blocks(&self, dir: &Path) -> Result<(), PipelineError> {
        let m = &self.config.mixing;
        for (id, path) in self.exported_scenes()? {
            let cloud = import_scene(&path)?;
            let seed = derive_seed(self.config.seed, &[tag("blocks"), tag(&id)]);
            let blocks = partition_blocks(&cloud, m.block_size, m.points_per_block, seed)?;
            log::info!("scene {id}: {} block(s)", blocks.len());
            write_blocks(&blocks, &dir.join(format!("{id}.txt")))?;
        }
        Ok(())
    }

    fn report(&self, dir: &Path) -> Result<(), PipelineError> {
        let pools_path = self.stage_dir(Stage::Mix).join("pools.toml");
        let pools = load_pool_sources(&pools_path)?;
        let mut rows: Vec<(String, String, [u64; NUM_CLASSES])> = Vec::new();
        let mut totals: BTreeMap<&str, [u64; NUM_CLASSES]> = BTreeMap::new();
        for (id, path) in self.exported_scenes()? {
            let counts = class_counts(&import_scene(&path)?);
            let source = match pools.get(&id) {
                Some(Source::Real) => "real",
                Some(Source::Synthetic) => "synthetic",
                None => "unknown",
            };
            let acc = totals.entry(if source == "real" { "real (all)" } else { "synthetic (all)" }).or_default();
            for (a, c) in acc.iter_mut().zip(counts) {
                *a += c;
            }
            rows.push((id, source.to_string(), counts));
        }
        for (name, counts) in &totals {
            rows.push((name.to_string(), String::new(), *counts));
        }
        fs::write(dir.join("class_proportions.txt"), proportions_table(&rows)).map_err(io_err(dir))?;

        let plans = load_experiment_plans(&self.stage_dir(Stage::Mix).join("plans.toml"))?;
        let mut counts = String::new();
        let _ = writeln!(counts, "{:>10} {:>9} {:>5} {:>5}", "proportion", "synthetic", "real", "total");
        for p in plans.iter().filter_map(|p| match p {
            ExperimentPlan::Mix(m) if m.replicate_index == 0 => Some(m),
            _ => None,
        }) {
            let (s, r) = (p.synthetic_picks.len(), p.real_picks.len());
            let _ = writeln!(counts, "{:>9}% {s:>9} {r:>5} {:>5}", p.proportion, s + r);
        }
        let n_mix = plans.iter().filter(|p| matches!(p, ExperimentPlan::Mix(_))).count();
        let _ = writeln!(counts, "\nmix plans: {n_mix}\nbenchmark plans: {}", plans.len() - n_mix);
        fs::write(dir.join("mix_counts.txt"), counts).map_err(io_err(dir))?;
        Ok(())
    }
}

/// Pool contents as recorded by the mix stage (no paths, so the file does not
/// depend on where inputs live).
#[derive(Debug, Serialize, Deserialize)]
struct PoolSummary {
    scenes: Vec<PoolSummaryEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolSummaryEntry {
    id: String,
    source: Source,
    point_count: usize,
}

fn load_pool_sources(path: &Path) -> Result<BTreeMap<String, Source>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc: PoolSummary =
        toml::from_str(&text).map_err(|e| PipelineError::Parse(format!("{}: {e}", path.display())))?;
    Ok(doc.scenes.into_iter().map(|e| (e.id, e.source)).collect())
}

fn proportions_table(rows: &[(String, String, [u64; NUM_CLASSES])]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<width$} {:<9}", "scene", "source");
    for c in SemanticClass::ALL {
        let _ = write!(s, " {:>8}", c.name());
    }
    let _ = writeln!(s, " {:>10}", "points");
    for (name, source, counts) in rows {
        let n: u64 = counts.iter().sum();
        let _ = write!(s, "{name:<width$} {source:<9}");
        for c in counts {
            let pct = if n > 0 { 100.0 * *c as f64 / n as f64 } else { 0.0 };
            let _ = write!(s, " {pct:>8.2}");
        }
        let _ = writeln!(s, " {n:>10}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_fully_defaulted_and_valid() {
        let loaded = LoadedConfig::load(None, &[]).unwrap();
        assert_eq!(loaded.snapshot, PipelineConfig::default());
        assert_eq!(loaded.config.scanner, ScannerConfig::default());
        assert!(validate_config(&loaded.config).is_empty());
    }

    #[test]
    fn negative_range_names_the_field() {
        let loaded = LoadedConfig::load(None, &["scanner.max_dist=-1".into()]).unwrap();
        let errors = validate_config(&loaded.config);
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].field, "scanner.max_dist");
    }

    #[test]
    fn overrides_parse_values_and_strings() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "mixing.total=12").unwrap();
        apply_override(&mut t, "verbosity=debug").unwrap();
        apply_override(&mut t, "mixing.proportions=[0, 50]").unwrap();
        let cfg: PipelineConfig = toml::Value::Table(t).try_into().unwrap();
        assert_eq!(cfg.mixing.total, 12);
        assert_eq!(cfg.mixing.proportions, vec![0, 50]);
        assert_eq!(cfg.verbosity, "debug");
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = LoadedConfig::load(None, &["scanner.bogus=1".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn scan_before_plan_asks_for_plan() {
        let dir = tempfile::tempdir().unwrap();
        let scene = crate::scene::save_scene(&crate::fixtures::closed_cube(4.0), &dir.path().join("scene")).unwrap();
        let mut loaded = LoadedConfig::load(None, &[format!("scene={:?}", scene.display().to_string())]).unwrap();
        loaded.set_output(&dir.path().join("out"));
        let p = Pipeline::new(loaded).unwrap();
        let err = p.run_stage(Stage::Scan).unwrap_err();
        assert!(err.to_string().contains("run plan first"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<PipelineConfig>(&text).unwrap(), cfg);
    }
}
