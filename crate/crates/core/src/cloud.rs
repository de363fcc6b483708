//! Point records, point clouds, and the ASCII point format.
//!
//! One point per line: `x y z r g b label station`. `label` is the class code
//! or `-1` when unlabeled; `station` is the scanner station index or `-1`.
//! Readers also accept the 6-column (`x y z r g b`) and 7-column
//! (`... label`) variants produced by other tools.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::labels::SemanticClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub position: Vec3,
    pub color: Rgb,
    pub label: Option<SemanticClass>,
    pub station: Option<u32>,
    /// Index of the scene component the point was measured on. Only filled by
    /// debug-mode scans; never serialized into the main point file.
    pub component: Option<u32>,
}

impl PointRecord {
    pub fn new(position: Vec3) -> Self {
        Self { position, color: Rgb::BLACK, label: None, station: None, component: None }
    }

    pub fn with_color(mut self, color: Rgb) -> Self {
        self.color = color;
        self
    }

    pub fn with_label(mut self, label: SemanticClass) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<PointRecord>,
    pub frame: String,
}

pub const WORLD_FRAME: &str = "world";

impl PointCloud {
    pub fn new(frame: impl Into<String>) -> Self {
        Self { points: Vec::new(), frame: frame.into() }
    }

    pub fn from_points(points: Vec<PointRecord>) -> Self {
        Self { points, frame: WORLD_FRAME.to_string() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.points.iter().map(|p| p.position)
    }

    pub fn extend(&mut self, other: PointCloud) {
        self.points.extend(other.points);
    }
}

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CloudError + '_ {
    move |source| CloudError::Io { path: path.to_path_buf(), source }
}

fn label_code(label: Option<SemanticClass>) -> i64 {
    label.map_or(-1, |c| i64::from(c.code()))
}

/// Formats one point line, without the trailing newline.
pub fn format_point(p: &PointRecord, out: &mut String) {
    let [r, g, b] = p.color.0;
    let station = p.station.map_or(-1, i64::from);
    // `{}` on f64 prints the shortest representation that parses back exactly.
    let _ = write!(
        out,
        "{} {} {} {} {} {} {} {}",
        p.position.x,
        p.position.y,
        p.position.z,
        r,
        g,
        b,
        label_code(p.label),
        station
    );
}

pub fn write_cloud<W: Write>(cloud: &PointCloud, mut w: W) -> io::Result<()> {
    let mut line = String::with_capacity(96);
    for p in &cloud.points {
        line.clear();
        format_point(p, &mut line);
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

pub fn save_cloud(cloud: &PointCloud, path: &Path) -> Result<(), CloudError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let f = fs::File::create(path).map_err(io_err(path))?;
    write_cloud(cloud, io::BufWriter::new(f)).map_err(io_err(path))
}

/// Writes the debug sidecar: one true component id per point, `-` when the
/// point carries none.
pub fn save_component_sidecar(cloud: &PointCloud, ids: &[String], path: &Path) -> Result<(), CloudError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = io::BufWriter::new(f);
    for p in &cloud.points {
        let id = p.component.and_then(|c| ids.get(c as usize)).map_or("-", String::as_str);
        writeln!(w, "{id}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn parse_line(text: &str) -> Result<PointRecord, String> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if !(6..=8).contains(&fields.len()) {
        return Err(format!("expected 6 to 8 fields, found {}", fields.len()));
    }
    let mut xyz = [0.0; 3];
    for (slot, s) in xyz.iter_mut().zip(&fields[..3]) {
        *slot = s.parse::<f64>().map_err(|e| format!("bad coordinate {s:?}: {e}"))?;
        if !slot.is_finite() {
            return Err(format!("non-finite coordinate {s:?}"));
        }
    }
    let mut rgb = [0u8; 3];
    for (slot, s) in rgb.iter_mut().zip(&fields[3..6]) {
        // Real scans sometimes store colors as floats; accept integral ones.
        let v = s
            .parse::<i64>()
            .or_else(|_| s.parse::<f64>().map(|f| f.round() as i64))
            .map_err(|e| format!("bad color {s:?}: {e}"))?;
        *slot = u8::try_from(v).map_err(|_| format!("color channel {v} outside 0..=255"))?;
    }
    let mut rec = PointRecord::new(Vec3::from(xyz)).with_color(Rgb(rgb));
    if let Some(s) = fields.get(6) {
        let code: i64 = s.parse().map_err(|e| format!("bad label {s:?}: {e}"))?;
        rec.label = match code {
            -1 => None,
            c => Some(SemanticClass::from_code(c).ok_or_else(|| format!("label {c} outside -1..=7"))?),
        };
    }
    if let Some(s) = fields.get(7) {
        let st: i64 = s.parse().map_err(|e| format!("bad station {s:?}: {e}"))?;
        rec.station = match st {
            -1 => None,
            s => Some(u32::try_from(s).map_err(|_| format!("station {s} out of range"))?),
        };
    }
    Ok(rec)
}

pub fn read_cloud<R: BufRead>(r: R, path: &Path) -> Result<PointCloud, CloudError> {
    let mut cloud = PointCloud::new(WORLD_FRAME);
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let rec = parse_line(text).map_err(|message| CloudError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        cloud.points.push(rec);
    }
    Ok(cloud)
}

pub fn load_cloud(path: &Path) -> Result<PointCloud, CloudError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_cloud(BufReader::new(f), path)
}
