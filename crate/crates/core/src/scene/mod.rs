//! Labeled building geometry: component meshes, room footprints, and the
//! manifest that ties them together.
//!
//! A scene manifest is a TOML document:
//!
//! ```toml
//! units = "m"
//!
//! [[components]]
//! id = "office_wall_n"
//! class = "wall"
//! color = [200, 200, 190]
//! mesh = "meshes/office_wall_n.obj"
//!
//! [[rooms]]
//! name = "office"
//! floor_z = 0.0
//! polygon = [[0.0, 0.0], [5.0, 0.0], [5.0, 4.0], [0.0, 4.0]]
//! ```
//!
//! Mesh paths are relative to the manifest. Coordinates are meters, Z-up.

pub mod obj;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::Rgb;
use crate::geometry::{triangle_area, Point2, Vec3};
use crate::labels::{consolidate_label, SemanticClass};
use crate::polygon;

/// Triangles at or below this area (m²) are degenerate.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Corner positions of triangle `i`. Panics on an unvalidated mesh with
    /// out-of-range indices.
    pub fn corners(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.corners(i);
        triangle_area(a, b, c)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub id: String,
    pub class: SemanticClass,
    pub mesh: TriangleMesh,
    /// The component's single consistent color.
    pub color: Rgb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomFootprint {
    pub name: String,
    /// Counter-clockwise, implicitly closed.
    pub polygon: Vec<Point2>,
    pub floor_z: f64,
}

impl RoomFootprint {
    pub fn new(name: impl Into<String>, polygon: Vec<Point2>, floor_z: f64) -> Self {
        Self { name: name.into(), polygon, floor_z }
    }

    pub fn contains(&self, p: Point2) -> bool {
        polygon::contains(&self.polygon, p)
    }
}

/// Shoelace area of a valid (counter-clockwise) footprint, m².
pub fn polygon_area(footprint: &RoomFootprint) -> f64 {
    polygon::signed_area(&footprint.polygon)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub components: Vec<Component>,
    pub rooms: Vec<RoomFootprint>,
}

impl Scene {
    pub fn triangle_count(&self) -> usize {
        self.components.iter().map(|c| c.mesh.triangles.len()).sum()
    }

    pub fn component_ids(&self) -> Vec<String> {
        self.components.iter().map(|c| c.id.clone()).collect()
    }

    pub fn room(&self, name: &str) -> Option<&RoomFootprint> {
        self.rooms.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entity {
    Component(String),
    Room(String),
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Component(id) => write!(f, "component {id:?}"),
            Entity::Room(name) => write!(f, "room {name:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    EmptyMesh,
    NonFiniteVertex { vertex: usize },
    IndexOutOfRange { triangle: usize, index: u32, vertex_count: usize },
    RepeatedIndex { triangle: usize },
    DegenerateTriangle { triangle: usize, area: f64 },
    DuplicateId,
    DegenerateFootprint { vertices: usize },
    NonFiniteFootprint,
    NonSimpleFootprint,
    ClockwiseFootprint { signed_area: f64 },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::EmptyMesh => write!(f, "mesh has no triangles"),
            ViolationKind::NonFiniteVertex { vertex } => write!(f, "vertex {vertex} is not finite"),
            ViolationKind::IndexOutOfRange { triangle, index, vertex_count } => write!(
                f,
                "mesh index out of range: triangle {triangle} references vertex {} of {vertex_count}",
                index + 1
            ),
            ViolationKind::RepeatedIndex { triangle } => {
                write!(f, "triangle {triangle} repeats a vertex index")
            }
            ViolationKind::DegenerateTriangle { triangle, area } => {
                write!(f, "degenerate triangle {triangle} (area {area:e} m²)")
            }
            ViolationKind::DuplicateId => write!(f, "duplicate identifier"),
            ViolationKind::DegenerateFootprint { vertices } => {
                write!(f, "degenerate footprint ({vertices} vertices, need at least 3)")
            }
            ViolationKind::NonFiniteFootprint => write!(f, "footprint has non-finite coordinates"),
            ViolationKind::NonSimpleFootprint => write!(f, "footprint is not a simple polygon"),
            ViolationKind::ClockwiseFootprint { signed_area } => write!(
                f,
                "footprint must be counter-clockwise with positive area (signed area {signed_area})"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub entity: Entity,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.kind)
    }
}

fn validate_mesh(id: &str, mesh: &TriangleMesh, out: &mut Vec<Violation>) {
    let push = |out: &mut Vec<Violation>, kind| out.push(Violation { entity: Entity::Component(id.to_string()), kind });
    if mesh.triangles.is_empty() {
        push(out, ViolationKind::EmptyMesh);
    }
    for (vertex, v) in mesh.vertices.iter().enumerate() {
        if !v.is_finite() {
            push(out, ViolationKind::NonFiniteVertex { vertex });
        }
    }
    let n = mesh.vertices.len();
    for (triangle, tri) in mesh.triangles.iter().enumerate() {
        if let Some(&index) = tri.iter().find(|&&i| i as usize >= n) {
            push(out, ViolationKind::IndexOutOfRange { triangle, index, vertex_count: n });
            continue;
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            push(out, ViolationKind::RepeatedIndex { triangle });
            continue;
        }
        let area = mesh.triangle_area(triangle);
        if !(area > MIN_TRIANGLE_AREA) {
            push(out, ViolationKind::DegenerateTriangle { triangle, area });
        }
    }
}

fn validate_room(room: &RoomFootprint, out: &mut Vec<Violation>) {
    let mut push = |kind| out.push(Violation { entity: Entity::Room(room.name.clone()), kind });
    let poly = &room.polygon;
    if poly.len() < 3 {
        push(ViolationKind::DegenerateFootprint { vertices: poly.len() });
        return;
    }
    if !room.floor_z.is_finite() || poly.iter().any(|p| !p.is_finite()) {
        push(ViolationKind::NonFiniteFootprint);
        return;
    }
    if !polygon::is_simple(poly) {
        push(ViolationKind::NonSimpleFootprint);
        return;
    }
    let signed_area = polygon::signed_area(poly);
    if !(signed_area > 0.0) {
        push(ViolationKind::ClockwiseFootprint { signed_area });
    }
}

/// Lists every invariant violation in the scene; empty iff the scene is valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for c in &scene.components {
        if !seen.insert(c.id.as_str()) {
            out.push(Violation { entity: Entity::Component(c.id.clone()), kind: ViolationKind::DuplicateId });
        }
        validate_mesh(&c.id, &c.mesh, &mut out);
    }
    let mut seen = HashSet::new();
    for r in &scene.rooms {
        if !seen.insert(r.name.as_str()) {
            out.push(Violation { entity: Entity::Room(r.name.clone()), kind: ViolationKind::DuplicateId });
        }
        validate_room(r, &mut out);
    }
    out
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: units must be \"m\", found {found:?}")]
    Units { path: PathBuf, found: String },
    #[error("component {component:?}: {path}:{line}: {message}")]
    Mesh { component: String, path: PathBuf, line: usize, message: String },
    #[error("invalid scene: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    units: String,
    #[serde(default)]
    components: Vec<ComponentEntry>,
    #[serde(default)]
    rooms: Vec<RoomEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentEntry {
    id: String,
    class: String,
    color: Vec<i64>,
    mesh: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomEntry {
    name: String,
    floor_z: f64,
    polygon: Vec<[f64; 2]>,
}

fn parse_color(id: &str, raw: &[i64], path: &Path) -> Result<Rgb, SceneError> {
    let bad = || SceneError::Manifest {
        path: path.to_path_buf(),
        message: format!("component {id:?}: color must be three integers in 0..=255, found {raw:?}"),
    };
    if raw.len() != 3 {
        return Err(bad());
    }
    let mut rgb = [0u8; 3];
    for (slot, &v) in rgb.iter_mut().zip(raw) {
        *slot = u8::try_from(v).map_err(|_| bad())?;
    }
    Ok(Rgb(rgb))
}

/// Loads and validates a scene manifest together with the meshes it references.
pub fn load_scene(manifest_path: &Path) -> Result<Scene, SceneError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|source| SceneError::Io { path: manifest_path.to_path_buf(), source })?;
    let doc: ManifestDoc = toml::from_str(&text).map_err(|e| SceneError::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if doc.units != "m" {
        return Err(SceneError::Units { path: manifest_path.to_path_buf(), found: doc.units });
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut scene = Scene::default();
    for entry in doc.components {
        let mesh_path = base.join(&entry.mesh);
        let text = fs::read_to_string(&mesh_path)
            .map_err(|source| SceneError::Io { path: mesh_path.clone(), source })?;
        let mesh = obj::parse_obj(&text, &mesh_path.display().to_string()).map_err(|e| SceneError::Mesh {
            component: entry.id.clone(),
            path: mesh_path.clone(),
            line: e.line,
            message: e.message,
        })?;
        let color = parse_color(&entry.id, &entry.color, manifest_path)?;
        scene.components.push(Component { class: consolidate_label(&entry.class), id: entry.id, mesh, color });
    }
    for r in doc.rooms {
        scene.rooms.push(RoomFootprint {
            name: r.name,
            polygon: r.polygon.into_iter().map(Point2::from).collect(),
            floor_z: r.floor_z,
        });
    }
    let violations = validate_scene(&scene);
    if !violations.is_empty() {
        return Err(SceneError::Invalid(violations));
    }
    Ok(scene)
}

/// The manifest followed by every mesh file it references.
pub fn scene_files(manifest_path: &Path) -> Result<Vec<PathBuf>, SceneError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|source| SceneError::Io { path: manifest_path.to_path_buf(), source })?;
    let doc: ManifestDoc = toml::from_str(&text).map_err(|e| SceneError::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut files = vec![manifest_path.to_path_buf()];
    files.extend(doc.components.iter().map(|c| base.join(&c.mesh)));
    Ok(files)
}

fn mesh_file_name(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:04}_{clean}.obj")
}

/// Writes `manifest.toml` plus one mesh file per component under `dir`;
/// returns the manifest path.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<PathBuf, SceneError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SceneError::Io { path, source }
    };
    let mesh_dir = dir.join("meshes");
    fs::create_dir_all(&mesh_dir).map_err(io(&mesh_dir))?;
    let mut doc = ManifestDoc { units: "m".into(), components: Vec::new(), rooms: Vec::new() };
    for (i, c) in scene.components.iter().enumerate() {
        let rel = PathBuf::from("meshes").join(mesh_file_name(i, &c.id));
        let path = dir.join(&rel);
        fs::write(&path, obj::write_obj(&c.mesh)).map_err(io(&path))?;
        doc.components.push(ComponentEntry {
            id: c.id.clone(),
            class: c.class.name().to_string(),
            color: c.color.0.iter().map(|&v| i64::from(v)).collect(),
            mesh: rel,
        });
    }
    for r in &scene.rooms {
        doc.rooms.push(RoomEntry {
            name: r.name.clone(),
            floor_z: r.floor_z,
            polygon: r.polygon.iter().map(|p| [p.x, p.y]).collect(),
        });
    }
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&doc).map_err(|e| SceneError::Manifest { path: path.clone(), message: e.to_string() })?;
    fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}
