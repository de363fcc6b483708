//! Virtual time-of-flight scanner.
//!
//! Each station sweeps `scan_num_w × scan_num_h` frames; every frame is a
//! pinhole image of `tof_xres × tof_yres` rays spanning the lens field of
//! view. Rays report the nearest surface within the maximum range, so
//! occluded geometry never produces points.

mod bvh;

pub use bvh::{IndexError, PreparedRay, RawHit, TriangleIndex};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, PointRecord, WORLD_FRAME};
use crate::geometry::Vec3;
use crate::planner::StationPlan;
use crate::seed;

/// Hits at or below this distance are treated as self-grazing and ignored.
pub const HIT_EPSILON: f64 = 1e-6;

/// Scanner parameters. The sensor's own `tof_`-prefixed names are accepted
/// as aliases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScannerConfig {
    /// Horizontal step between frames, degrees.
    pub scan_step_w: f64,
    /// Vertical step between frames, degrees.
    pub scan_step_h: f64,
    pub scan_num_w: u32,
    pub scan_num_h: u32,
    pub tof_xres: u32,
    pub tof_yres: u32,
    #[serde(alias = "tof_lens_angle_w")]
    pub lens_angle_w: f64,
    #[serde(alias = "tof_lens_angle_h")]
    pub lens_angle_h: f64,
    #[serde(alias = "tof_max_dist")]
    pub max_dist: f64,
    /// Stored for completeness; ray geometry is fully determined by the
    /// field of view and resolution.
    #[serde(alias = "tof_focal_length")]
    pub focal_length: f64,
    /// Standard deviation of radial Gaussian range noise, meters. 0 = off.
    pub range_noise_sigma: f64,
    /// Post-scan voxel thinning edge length, meters. 0 = off.
    pub voxel_thin_m: f64,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        Self {
            scan_step_w: 25.0,
            scan_step_h: 25.0,
            scan_num_w: 15,
            scan_num_h: 6,
            tof_xres: 20,
            tof_yres: 20,
            lens_angle_w: 30.0,
            lens_angle_h: 30.0,
            max_dist: 6.5,
            focal_length: 2.0,
            range_noise_sigma: 0.0,
            voxel_thin_m: 0.0,
        }
    }
}

impl ScannerConfig {
    pub fn rays_per_station(&self) -> usize {
        self.scan_num_w as usize * self.scan_num_h as usize * self.tof_xres as usize * self.tof_yres as usize
    }

    /// Field-level problems as `(field, message)` pairs, using serialized names.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        for (name, v) in [
            ("scan_num_w", self.scan_num_w),
            ("scan_num_h", self.scan_num_h),
            ("tof_xres", self.tof_xres),
            ("tof_yres", self.tof_yres),
        ] {
            if v < 1 {
                out.push((name, "must be >= 1".to_string()));
            }
        }
        for (name, v) in [
            ("scan_step_w", self.scan_step_w),
            ("scan_step_h", self.scan_step_h),
            ("lens_angle_w", self.lens_angle_w),
            ("lens_angle_h", self.lens_angle_h),
        ] {
            if !(v > 0.0 && v < 180.0) {
                out.push((name, format!("must be in (0, 180) degrees, found {v}")));
            }
        }
        if !(self.max_dist.is_finite() && self.max_dist > 0.0) {
            out.push(("max_dist", format!("must be > 0, found {}", self.max_dist)));
        }
        if !self.focal_length.is_finite() {
            out.push(("focal_length", "must be finite".to_string()));
        }
        if !(self.range_noise_sigma.is_finite() && self.range_noise_sigma >= 0.0) {
            out.push(("range_noise_sigma", format!("must be >= 0, found {}", self.range_noise_sigma)));
        }
        if !(self.voxel_thin_m.is_finite() && self.voxel_thin_m >= 0.0) {
            out.push(("voxel_thin_m", format!("must be >= 0, found {}", self.voxel_thin_m)));
        }
        out
    }

    /// `(azimuth, elevation)` of every frame center in degrees, ordered by
    /// `(k, j)`: elevation row first, then azimuth column.
    pub fn frame_centers(&self) -> Vec<(f64, f64)> {
        let half = (f64::from(self.scan_num_h) - 1.0) / 2.0;
        let mut out = Vec::with_capacity((self.scan_num_w * self.scan_num_h) as usize);
        for k in 0..self.scan_num_h {
            for j in 0..self.scan_num_w {
                out.push((f64::from(j) * self.scan_step_w, (f64::from(k) - half) * self.scan_step_h));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    pub station: u32,
    /// `k * scan_num_w + j`.
    pub frame: u32,
    pub pixel_u: u32,
    pub pixel_v: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Index into the scene's component list.
    pub component: u32,
    /// Triangle index within that component's mesh.
    pub triangle: u32,
}

/// Unit direction for azimuth/elevation in degrees; azimuth 0 is +x,
/// 90 is +y, elevation is measured up from the horizontal plane.
pub fn direction(azimuth_deg: f64, elevation_deg: f64) -> Vec3 {
    let (sa, ca) = azimuth_deg.to_radians().sin_cos();
    let (se, ce) = elevation_deg.to_radians().sin_cos();
    Vec3::new(ce * ca, ce * sa, se)
}

/// All rays of one station in `(k, j, v, u)` order.
pub fn generate_rays(station: Vec3, station_index: u32, config: &ScannerConfig) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(config.rays_per_station());
    let xres = f64::from(config.tof_xres);
    let yres = f64::from(config.tof_yres);
    for (frame, (az, el)) in config.frame_centers().into_iter().enumerate() {
        for v in 0..config.tof_yres {
            let phi = ((f64::from(v) + 0.5) / yres - 0.5) * config.lens_angle_h;
            for u in 0..config.tof_xres {
                let theta = ((f64::from(u) + 0.5) / xres - 0.5) * config.lens_angle_w;
                rays.push(Ray {
                    origin: station,
                    direction: direction(az + theta, el + phi),
                    station: station_index,
                    frame: frame as u32,
                    pixel_u: u,
                    pixel_v: v,
                });
            }
        }
    }
    rays
}

fn to_hit(ray: &Ray, raw: RawHit, index: &TriangleIndex) -> Hit {
    let (component, triangle) = index.owner(raw.primitive);
    Hit { t: raw.t, point: ray.origin + ray.direction * raw.t, component, triangle }
}

/// Nearest surface along the ray with `HIT_EPSILON < t <= max_dist`.
pub fn cast_ray(ray: &Ray, index: &TriangleIndex, config: &ScannerConfig) -> Option<Hit> {
    index
        .nearest(ray.origin, ray.direction, HIT_EPSILON, config.max_dist)
        .map(|raw| to_hit(ray, raw, index))
}

/// Same contract as [`cast_ray`], testing every triangle.
pub fn cast_ray_exhaustive(ray: &Ray, index: &TriangleIndex, config: &ScannerConfig) -> Option<Hit> {
    index
        .nearest_exhaustive(ray.origin, ray.direction, HIT_EPSILON, config.max_dist)
        .map(|raw| to_hit(ray, raw, index))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScanOptions {
    pub rng_seed: u64,
    /// Attach the true component index to each point.
    pub debug: bool,
}

/// One point per ray that hits, in ray order. Points are unlabeled and
/// uncolored; range noise (if enabled) is drawn from a stream keyed by the
/// station index so results do not depend on scheduling.
pub fn scan_station(
    index: &TriangleIndex,
    station: Vec3,
    station_index: u32,
    config: &ScannerConfig,
    opts: ScanOptions,
) -> PointCloud {
    let rays = generate_rays(station, station_index, config);
    let hits: Vec<(Ray, Hit)> = rays
        .par_iter()
        .filter_map(|r| cast_ray(r, index, config).map(|h| (*r, h)))
        .collect();

    let noise = (config.range_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, config.range_noise_sigma).expect("sigma validated finite and positive"));
    let mut rng = seed::stream(opts.rng_seed, &[seed::tag("range-noise"), u64::from(station_index)]);

    let points = hits
        .into_iter()
        .map(|(ray, hit)| {
            let position = match &noise {
                Some(n) => {
                    let t = (hit.t + n.sample(&mut rng)).clamp(HIT_EPSILON, config.max_dist);
                    ray.origin + ray.direction * t
                }
                None => hit.point,
            };
            PointRecord {
                station: Some(station_index),
                component: opts.debug.then_some(hit.component),
                ..PointRecord::new(position)
            }
        })
        .collect();
    let cloud = PointCloud { points, frame: WORLD_FRAME.to_string() };
    if config.voxel_thin_m > 0.0 {
        voxel_thin(&cloud, config.voxel_thin_m)
    } else {
        cloud
    }
}

/// Scans every station of every plan; station indices run globally in plan
/// order. Returns one cloud per plan.
pub fn scan_rooms(
    index: &TriangleIndex,
    plans: &[StationPlan],
    config: &ScannerConfig,
    opts: ScanOptions,
) -> Vec<PointCloud> {
    let mut jobs = Vec::new();
    for (pi, plan) in plans.iter().enumerate() {
        for &s in &plan.stations {
            jobs.push((pi, s, jobs.len() as u32));
        }
    }
    let scans: Vec<(usize, PointCloud)> = jobs
        .par_iter()
        .map(|&(pi, s, si)| (pi, scan_station(index, s, si, config, opts)))
        .collect();
    let mut rooms = vec![PointCloud::new(WORLD_FRAME); plans.len()];
    for (pi, cloud) in scans {
        rooms[pi].extend(cloud);
    }
    rooms
}

/// Registered union of all stations. Stations already share the world frame,
/// so registration is the identity.
pub fn scan_scene(index: &TriangleIndex, plans: &[StationPlan], config: &ScannerConfig, opts: ScanOptions) -> PointCloud {
    let mut all = PointCloud::new(WORLD_FRAME);
    for room in scan_rooms(index, plans, config, opts) {
        all.extend(room);
    }
    all
}

/// Keeps the first point (in cloud order) of each occupied voxel.
pub fn voxel_thin(cloud: &PointCloud, voxel: f64) -> PointCloud {
    let mut seen = std::collections::HashSet::new();
    let points = cloud
        .points
        .iter()
        .filter(|p| {
            let key = (
                (p.position.x / voxel).floor() as i64,
                (p.position.y / voxel).floor() as i64,
                (p.position.z / voxel).floor() as i64,
            );
            seen.insert(key)
        })
        .copied()
        .collect();
    PointCloud { points, frame: cloud.frame.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Rgb;
    use crate::labels::SemanticClass;
    use crate::scene::{Component, Scene, TriangleMesh};

    fn wall_at(x: f64, id: &str) -> Component {
        Component {
            id: id.into(),
            class: SemanticClass::Wall,
            mesh: TriangleMesh {
                vertices: vec![
                    Vec3::new(x, -1.0, -1.0),
                    Vec3::new(x, 1.0, -1.0),
                    Vec3::new(x, 1.0, 1.0),
                    Vec3::new(x, -1.0, 1.0),
                ],
                triangles: vec![[0, 1, 2], [0, 2, 3]],
            },
            color: Rgb::BLACK,
        }
    }

    fn ray_x() -> Ray {
        Ray {
            origin: Vec3::ZERO,
            direction: Vec3::new(1.0, 0.0, 0.0),
            station: 0,
            frame: 0,
            pixel_u: 0,
            pixel_v: 0,
        }
    }

    #[test]
    fn defaults_match_sensor_table() {
        let c = ScannerConfig::default();
        assert_eq!((c.scan_step_w, c.scan_step_h), (25.0, 25.0));
        assert_eq!((c.scan_num_w, c.scan_num_h), (15, 6));
        assert_eq!((c.tof_xres, c.tof_yres), (20, 20));
        assert_eq!((c.lens_angle_w, c.lens_angle_h), (30.0, 30.0));
        assert_eq!(c.max_dist, 6.5);
        assert_eq!(c.focal_length, 2.0);
        assert_eq!(c.range_noise_sigma, 0.0);
        assert_eq!(c.rays_per_station(), 36_000);
    }

    #[test]
    fn single_pixel_single_frame_looks_along_x() {
        let c = ScannerConfig { scan_num_w: 1, scan_num_h: 1, tof_xres: 1, tof_yres: 1, ..Default::default() };
        let rays = generate_rays(Vec3::ZERO, 0, &c);
        assert_eq!(rays.len(), 1);
        assert_eq!(rays[0].direction, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn ray_order_is_row_frame_pixel() {
        let c = ScannerConfig { scan_num_w: 2, scan_num_h: 2, tof_xres: 2, tof_yres: 2, ..Default::default() };
        let rays = generate_rays(Vec3::ZERO, 0, &c);
        let keys: Vec<_> = rays.iter().map(|r| (r.frame, r.pixel_v, r.pixel_u)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for r in &rays {
            assert!((r.direction.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn default_elevation_centers() {
        let c = ScannerConfig::default();
        let els: Vec<f64> = c.frame_centers().iter().step_by(15).map(|f| f.1).collect();
        assert_eq!(els, vec![-62.5, -37.5, -12.5, 12.5, 37.5, 62.5]);
    }

    #[test]
    fn cast_ray_analytic_cases() {
        let cfg = ScannerConfig::default();
        let scene = Scene { components: vec![wall_at(5.0, "w5")], rooms: vec![] };
        let idx = TriangleIndex::build(&scene).unwrap();
        let hit = cast_ray(&ray_x(), &idx, &cfg).unwrap();
        assert_eq!(hit.t, 5.0);
        assert_eq!(hit.point, Vec3::new(5.0, 0.0, 0.0));

        let far = Scene { components: vec![wall_at(7.0, "w7")], rooms: vec![] };
        let idx = TriangleIndex::build(&far).unwrap();
        assert_eq!(cast_ray(&ray_x(), &idx, &cfg), None);

        let two = Scene { components: vec![wall_at(4.0, "w4"), wall_at(3.0, "w3")], rooms: vec![] };
        let idx = TriangleIndex::build(&two).unwrap();
        let hit = cast_ray(&ray_x(), &idx, &cfg).unwrap();
        assert_eq!(hit.point.x, 3.0);
        assert_eq!(hit.component, 1);
    }

    #[test]
    fn empty_scene_cannot_be_indexed() {
        assert_eq!(TriangleIndex::build(&Scene::default()).unwrap_err(), IndexError::EmptyScene);
        let two = Scene { components: vec![wall_at(4.0, "w4")], rooms: vec![] };
        assert_eq!(TriangleIndex::build(&two).unwrap().primitive_count(), 2);
    }

    #[test]
    fn noise_stays_in_range_and_is_reproducible() {
        let scene = Scene { components: vec![wall_at(6.4, "w")], rooms: vec![] };
        let idx = TriangleIndex::build(&scene).unwrap();
        let cfg = ScannerConfig { range_noise_sigma: 0.2, scan_num_w: 1, scan_num_h: 1, ..Default::default() };
        let opts = ScanOptions { rng_seed: 9, debug: false };
        let a = scan_station(&idx, Vec3::ZERO, 0, &cfg, opts);
        let b = scan_station(&idx, Vec3::ZERO, 0, &cfg, opts);
        assert_eq!(a, b);
        assert!(!a.is_empty());
        for p in &a.points {
            assert!(p.position.norm() <= cfg.max_dist + 1e-12);
        }
        let c = scan_station(&idx, Vec3::ZERO, 1, &cfg, opts);
        assert_ne!(a.points[0].position, c.points[0].position);
    }

    #[test]
    fn voxel_thinning_keeps_first_point_per_voxel() {
        let pts = [Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.02, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)];
        let cloud = PointCloud::from_points(pts.iter().map(|&p| PointRecord::new(p)).collect());
        let thin = voxel_thin(&cloud, 0.1);
        assert_eq!(thin.len(), 2);
        assert_eq!(thin.points[0].position, pts[0]);
    }
}
