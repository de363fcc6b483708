//! Label and color transfer by thresholded nearest-neighbor matching.
//!
//! A scanned point takes the class (and consistent color) of the nearest
//! point in the dense per-component surface clouds when that neighbor is
//! strictly closer than the threshold; otherwise it becomes clutter. Color
//! transfer from a co-registered real scan works the same way with RGB in
//! place of the class.

mod kdtree;
pub mod sampling;

pub use kdtree::KdTree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{PointCloud, PointRecord, Rgb, WORLD_FRAME};
use crate::geometry::Vec3;
use crate::labels::SemanticClass;
use crate::scene::Scene;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotateError {
    #[error("empty target: nearest-neighbor index has no points")]
    EmptyTarget,
    #[error("empty reference: color reference cloud has no points")]
    EmptyReference,
    #[error("rigid_transform needs 16 numbers, found {0}")]
    TransformLength(usize),
    #[error("non-rigid transform: {0}")]
    NonRigid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    pub label_threshold_m: f64,
    pub color_threshold_m: f64,
    pub sample_density_per_m2: f64,
    /// Row-major 4×4 matrix applied to the reference cloud before color transfer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rigid_transform: Option<Vec<f64>>,
    /// Co-registered real scan used for color transfer. Without one the
    /// colorized cloud keeps its consistent component colors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_cloud: Option<std::path::PathBuf>,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            label_threshold_m: 0.05,
            color_threshold_m: 0.05,
            sample_density_per_m2: 400.0,
            rigid_transform: None,
            reference_cloud: None,
        }
    }
}

impl AnnotationConfig {
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (name, v) in [
            ("label_threshold_m", self.label_threshold_m),
            ("color_threshold_m", self.color_threshold_m),
            ("sample_density_per_m2", self.sample_density_per_m2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push((name, format!("must be > 0, found {v}")));
            }
        }
        if let Some(m) = &self.rigid_transform {
            if let Err(e) = RigidTransform::from_row_major(m) {
                out.push(("rigid_transform", e.to_string()));
            }
        }
        out
    }

    pub fn transform(&self) -> Result<Option<RigidTransform>, AnnotateError> {
        self.rigid_transform.as_deref().map(RigidTransform::from_row_major).transpose()
    }
}

/// Rotation plus translation as a homogeneous 4×4 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    m: [[f64; 4]; 4],
}

/// Largest allowed deviation of `RᵀR` from the identity.
pub const RIGID_TOLERANCE: f64 = 1e-6;

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        m: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
    };

    pub fn translation(v: Vec3) -> Self {
        let mut t = Self::IDENTITY;
        t.m[0][3] = v.x;
        t.m[1][3] = v.y;
        t.m[2][3] = v.z;
        t
    }

    /// Rotation by `angle` radians about +z, then translation by `v`.
    pub fn rotation_z(angle: f64, v: Vec3) -> Self {
        let (s, c) = angle.sin_cos();
        let mut t = Self::translation(v);
        t.m[0][0] = c;
        t.m[0][1] = -s;
        t.m[1][0] = s;
        t.m[1][1] = c;
        t
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self, AnnotateError> {
        if values.len() != 16 {
            return Err(AnnotateError::TransformLength(values.len()));
        }
        let mut m = [[0.0; 4]; 4];
        for (i, v) in values.iter().enumerate() {
            m[i / 4][i % 4] = *v;
        }
        let t = Self { m };
        t.check()?;
        Ok(t)
    }

    pub fn row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.m[i / 4][i % 4];
        }
        out
    }

    fn check(&self) -> Result<(), AnnotateError> {
        if self.m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AnnotateError::NonRigid("non-finite entry".into()));
        }
        if self.m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(AnnotateError::NonRigid(format!("bottom row must be [0, 0, 0, 1], found {:?}", self.m[3])));
        }
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.m[k][i] * self.m[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - expect).abs());
            }
        }
        if worst > RIGID_TOLERANCE {
            return Err(AnnotateError::NonRigid(format!("rotation block deviates from orthonormal by {worst:e}")));
        }
        let r = &self.m;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if det < 0.0 {
            return Err(AnnotateError::NonRigid("rotation block is a reflection".into()));
        }
        Ok(())
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z + m[0][3],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z + m[1][3],
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z + m[2][3],
        )
    }

    /// `[Rᵀ | -Rᵀt]`.
    pub fn inverse(&self) -> Self {
        let m = &self.m;
        let mut inv = Self::IDENTITY;
        for i in 0..3 {
            for j in 0..3 {
                inv.m[i][j] = m[j][i];
            }
        }
        for i in 0..3 {
            inv.m[i][3] = -(0..3).map(|k| m[k][i] * m[k][3]).sum::<f64>();
        }
        inv
    }
}

/// Dense surface samples of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentCloud {
    pub component_id: String,
    pub class: SemanticClass,
    pub color: Rgb,
    pub cloud: PointCloud,
}

/// Per-component stratified surface samples at `density` points per m².
pub fn sample_component_clouds(scene: &Scene, density: f64, rng_seed: u64) -> Vec<ComponentCloud> {
    scene
        .components
        .par_iter()
        .enumerate()
        .map(|(ci, c)| {
            let mut rng = seed::stream(rng_seed, &[seed::tag("surface-samples"), ci as u64]);
            let areas: Vec<f64> = (0..c.mesh.triangles.len()).map(|t| c.mesh.triangle_area(t)).collect();
            let total_area: f64 = areas.iter().sum();
            let n = ((density * total_area).round() as usize).max(1);
            let per_tri = sampling::largest_remainder(&areas, n);
            let mut points = Vec::with_capacity(n);
            for (t, k) in per_tri.into_iter().enumerate() {
                for p in sampling::sample_triangle(&c.mesh.corners(t), k, &mut rng) {
                    points.push(PointRecord::new(p).with_color(c.color).with_label(c.class));
                }
            }
            ComponentCloud {
                component_id: c.id.clone(),
                class: c.class,
                color: c.color,
                cloud: PointCloud { points, frame: WORLD_FRAME.to_string() },
            }
        })
        .collect()
}

/// Exact nearest-neighbor index over a target point set.
#[derive(Debug, Clone)]
pub struct NearestNeighborIndex {
    tree: KdTree,
}

impl NearestNeighborIndex {
    pub fn build(points: Vec<Vec3>) -> Result<Self, AnnotateError> {
        if points.is_empty() {
            return Err(AnnotateError::EmptyTarget);
        }
        Ok(Self { tree: KdTree::new(points) })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    /// `(j*, d)`: index of the nearest target point and its distance.
    pub fn query(&self, p: Vec3) -> (usize, f64) {
        let (j, d2) = self.tree.nearest(p).expect("index is never empty");
        (j, d2.sqrt())
    }
}

pub fn nearest_neighbor(p: Vec3, index: &NearestNeighborIndex) -> (usize, f64) {
    index.query(p)
}

/// Reusable label transfer against a fixed set of component clouds.
#[derive(Debug, Clone)]
pub struct LabelTransfer {
    index: NearestNeighborIndex,
    targets: Vec<(SemanticClass, Rgb)>,
}

impl LabelTransfer {
    pub fn new(components: &[ComponentCloud]) -> Result<Self, AnnotateError> {
        let mut points = Vec::new();
        let mut targets = Vec::new();
        for c in components {
            for p in &c.cloud.points {
                points.push(p.position);
                targets.push((c.class, c.color));
            }
        }
        Ok(Self { index: NearestNeighborIndex::build(points)?, targets })
    }

    /// Labels every source point: the matched component's class and
    /// consistent color when `d < t`, clutter (color untouched) otherwise.
    pub fn apply(&self, source: &PointCloud, t: f64) -> PointCloud {
        let points = source
            .points
            .par_iter()
            .map(|p| {
                let (j, d) = self.index.query(p.position);
                let mut out = *p;
                if d < t {
                    let (class, color) = self.targets[j];
                    out.label = Some(class);
                    out.color = color;
                } else {
                    out.label = Some(SemanticClass::Clutter);
                }
                out
            })
            .collect();
        PointCloud { points, frame: source.frame.clone() }
    }
}

/// Labels a scanned cloud from per-component surface clouds. Matched points
/// also take their component's consistent color, which is what makes the
/// result a unicolored synthetic cloud.
pub fn transfer_labels(source: &PointCloud, component_clouds: &[ComponentCloud], t: f64) -> Result<PointCloud, AnnotateError> {
    Ok(LabelTransfer::new(component_clouds)?.apply(source, t))
}

/// Copies reference colors onto source points with a reference neighbor
/// strictly closer than `t_color`. Other points keep their color; labels and
/// geometry are never touched.
pub fn transfer_colors(
    source: &PointCloud,
    reference: &PointCloud,
    t_color: f64,
    transform: Option<&RigidTransform>,
) -> Result<PointCloud, AnnotateError> {
    if reference.is_empty() {
        return Err(AnnotateError::EmptyReference);
    }
    if let Some(t) = transform {
        t.check()?;
    }
    let positions: Vec<Vec3> = reference
        .points
        .iter()
        .map(|p| transform.map_or(p.position, |t| t.apply(p.position)))
        .collect();
    let index = NearestNeighborIndex::build(positions)?;
    let points = source
        .points
        .par_iter()
        .map(|p| {
            let (j, d) = index.query(p.position);
            let mut out = *p;
            if d < t_color {
                out.color = reference.points[j].color;
            }
            out
        })
        .collect();
    Ok(PointCloud { points, frame: source.frame.clone() })
}
