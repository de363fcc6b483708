//! Scanner station placement by centroidal Voronoi tessellation.
//!
//! The room footprint is discretized into a regular grid of samples; Lloyd's
//! algorithm alternates nearest-seed assignment over those samples with a
//! centroid update until the seeds stop moving.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, Vec3};
use crate::polygon;
use crate::scene::{polygon_area, RoomFootprint};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub coverage_area_m2: f64,
    pub sensor_height_m: f64,
    pub grid_resolution_m: f64,
    pub movement_tol_m: f64,
    pub max_iterations: u32,
    /// Overrides the pipeline seed for station planning when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            coverage_area_m2: 20.0,
            sensor_height_m: 1.5,
            grid_resolution_m: 0.05,
            movement_tol_m: 1e-3,
            max_iterations: 50,
            rng_seed: None,
        }
    }
}

impl PlannerConfig {
    /// Field-level problems as `(field, message)` pairs.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.coverage_area_m2) {
            out.push(("coverage_area_m2", format!("must be > 0, found {}", self.coverage_area_m2)));
        }
        if !self.sensor_height_m.is_finite() {
            out.push(("sensor_height_m", "must be finite".to_string()));
        }
        if !positive(self.grid_resolution_m) {
            out.push(("grid_resolution_m", format!("must be > 0, found {}", self.grid_resolution_m)));
        }
        if !positive(self.movement_tol_m) {
            out.push(("movement_tol_m", format!("must be > 0, found {}", self.movement_tol_m)));
        }
        if self.max_iterations < 1 {
            out.push(("max_iterations", "must be >= 1".to_string()));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("room {room:?}: domain too coarse: {samples} grid sample(s) for {seeds} seed(s)")]
    DomainTooCoarse { room: String, samples: usize, seeds: usize },
    #[error("invalid planner config: {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed station plan: {message}")]
    Format { path: PathBuf, message: String },
}

/// Boundary points count as inside.
pub fn point_in_polygon(p: Point2, footprint: &RoomFootprint) -> bool {
    polygon::contains(&footprint.polygon, p)
}

/// Regular grid over the footprint's bounding box, phase fixed at
/// `bbox_min + resolution/2`, keeping only points inside the footprint.
pub fn sample_domain(footprint: &RoomFootprint, resolution: f64, seeds: usize) -> Result<Vec<Point2>, PlannerError> {
    let (lo, hi) = polygon::bounds(&footprint.polygon);
    let mut samples = Vec::new();
    let mut iy = 0u64;
    loop {
        let y = lo.y + (iy as f64 + 0.5) * resolution;
        if y > hi.y {
            break;
        }
        let mut ix = 0u64;
        loop {
            let x = lo.x + (ix as f64 + 0.5) * resolution;
            if x > hi.x {
                break;
            }
            let p = Point2::new(x, y);
            if point_in_polygon(p, footprint) {
                samples.push(p);
            }
            ix += 1;
        }
        iy += 1;
    }
    if samples.len() < seeds {
        return Err(PlannerError::DomainTooCoarse {
            room: footprint.name.clone(),
            samples: samples.len(),
            seeds,
        });
    }
    Ok(samples)
}

/// Index of the nearest seed, ties going to the lowest index.
#[inline]
pub fn nearest_seed(p: Point2, seeds: &[Point2]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, s) in seeds.iter().enumerate() {
        let d = p.distance_squared(*s);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Discrete Voronoi cells: `cells[k]` is the seed owning `samples[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiAssignment {
    pub cells: Vec<usize>,
}

impl VoronoiAssignment {
    pub fn compute(seeds: &[Point2], samples: &[Point2]) -> Self {
        let cells = samples.par_iter().map(|&p| nearest_seed(p, seeds).0).collect();
        Self { cells }
    }

    /// Per-seed sample centroids, `None` for seeds owning no samples.
    pub fn centroids(&self, seed_count: usize, samples: &[Point2]) -> Vec<Option<Point2>> {
        let mut sum = vec![(0.0f64, 0.0f64, 0usize); seed_count];
        for (&cell, p) in self.cells.iter().zip(samples) {
            let s = &mut sum[cell];
            s.0 += p.x;
            s.1 += p.y;
            s.2 += 1;
        }
        sum.into_iter()
            .map(|(x, y, n)| (n > 0).then(|| Point2::new(x / n as f64, y / n as f64)))
            .collect()
    }
}

/// One Lloyd iteration. Seeds that own no samples stay where they are.
pub fn lloyd_step(seeds: &[Point2], samples: &[Point2]) -> (Vec<Point2>, f64) {
    let assignment = VoronoiAssignment::compute(seeds, samples);
    let centroids = assignment.centroids(seeds.len(), samples);
    let mut max_movement = 0.0f64;
    let next = seeds
        .iter()
        .zip(centroids)
        .map(|(&s, c)| {
            let n = c.unwrap_or(s);
            max_movement = max_movement.max(n.distance(s));
            n
        })
        .collect();
    (next, max_movement)
}

/// Mean squared distance from each sample to its nearest seed, m².
pub fn cvt_energy(seeds: &[Point2], samples: &[Point2]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples.iter().map(|&p| nearest_seed(p, seeds).1).sum();
    total / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationPlan {
    pub room_name: String,
    pub stations: Vec<Vec3>,
    pub iterations_used: u32,
    pub final_max_movement: f64,
    /// False when the iteration cap was hit before the tolerance was met.
    pub converged: bool,
    /// Stations whose converged seed fell outside a non-convex footprint and
    /// were moved onto the nearest sample of their own cell.
    pub snapped: u32,
}

pub fn station_count(footprint: &RoomFootprint, coverage_area_m2: f64) -> usize {
    let n = (polygon_area(footprint) / coverage_area_m2).ceil();
    (n as usize).max(1)
}

fn initial_seeds<R: Rng>(footprint: &RoomFootprint, n: usize, samples: &[Point2], rng: &mut R) -> Vec<Point2> {
    let (lo, hi) = polygon::bounds(&footprint.polygon);
    let mut seeds = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while seeds.len() < n {
        attempts += 1;
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        if attempts > 100_000 * n {
            // Pathologically thin footprints: fall back to random grid samples.
            seeds.push(samples[rng.random_range(0..samples.len())]);
            continue;
        }
        let p = Point2::new(lo.x + u * (hi.x - lo.x), lo.y + v * (hi.y - lo.y));
        if point_in_polygon(p, footprint) {
            seeds.push(p);
        }
    }
    seeds
}

/// Places `max(1, ceil(area / coverage_area))` stations in the room.
pub fn plan_stations(footprint: &RoomFootprint, config: &PlannerConfig, rng_seed: u64) -> Result<StationPlan, PlannerError> {
    if let Some((field, message)) = config.problems().into_iter().next() {
        return Err(PlannerError::Config { field, message });
    }
    let n = station_count(footprint, config.coverage_area_m2);
    let samples = sample_domain(footprint, config.grid_resolution_m, n)?;
    let mut rng = seed::stream(rng_seed, &[seed::tag("stations")]);
    let mut seeds = initial_seeds(footprint, n, &samples, &mut rng);

    let mut iterations_used = 0;
    let mut final_max_movement = f64::INFINITY;
    while iterations_used < config.max_iterations {
        let (next, moved) = lloyd_step(&seeds, &samples);
        seeds = next;
        iterations_used += 1;
        final_max_movement = moved;
        if moved < config.movement_tol_m {
            break;
        }
    }
    let converged = final_max_movement < config.movement_tol_m;

    let mut snapped = 0;
    let assignment = VoronoiAssignment::compute(&seeds, &samples);
    for (i, s) in seeds.iter_mut().enumerate() {
        if point_in_polygon(*s, footprint) {
            continue;
        }
        let nearest = samples
            .iter()
            .zip(&assignment.cells)
            .filter(|(_, &c)| c == i)
            .map(|(p, _)| *p)
            .min_by(|a, b| a.distance_squared(*s).total_cmp(&b.distance_squared(*s)));
        if let Some(p) = nearest {
            *s = p;
            snapped += 1;
        }
    }

    let z = footprint.floor_z + config.sensor_height_m;
    Ok(StationPlan {
        room_name: footprint.name.clone(),
        stations: seeds.iter().map(|s| Vec3::new(s.x, s.y, z)).collect(),
        iterations_used,
        final_max_movement,
        converged,
        snapped,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanFile {
    #[serde(default)]
    rooms: Vec<PlanEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanEntry {
    room_name: String,
    iterations_used: u32,
    final_max_movement: f64,
    converged: bool,
    snapped: u32,
    stations: Vec<[f64; 3]>,
}

pub fn save_plans(plans: &[StationPlan], path: &Path) -> Result<(), PlannerError> {
    let file = PlanFile {
        rooms: plans
            .iter()
            .map(|p| PlanEntry {
                room_name: p.room_name.clone(),
                iterations_used: p.iterations_used,
                final_max_movement: p.final_max_movement,
                converged: p.converged,
                snapped: p.snapped,
                stations: p.stations.iter().map(|s| s.to_array()).collect(),
            })
            .collect(),
    };
    let text = toml::to_string(&file)
        .map_err(|e| PlannerError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    fs::write(path, text).map_err(|source| PlannerError::Io { path: path.to_path_buf(), source })
}

pub fn load_plans(path: &Path) -> Result<Vec<StationPlan>, PlannerError> {
    let text = fs::read_to_string(path).map_err(|source| PlannerError::Io { path: path.to_path_buf(), source })?;
    let file: PlanFile =
        toml::from_str(&text).map_err(|e| PlannerError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(file
        .rooms
        .into_iter()
        .map(|e| StationPlan {
            room_name: e.room_name,
            stations: e.stations.into_iter().map(Vec3::from).collect(),
            iterations_used: e.iterations_used,
            final_max_movement: e.final_max_movement,
            converged: e.converged,
            snapped: e.snapped,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: f64, h: f64) -> RoomFootprint {
        RoomFootprint::new(
            "r",
            vec![Point2::new(0.0, 0.0), Point2::new(w, 0.0), Point2::new(w, h), Point2::new(0.0, h)],
            0.0,
        )
    }

    fn l_shape() -> RoomFootprint {
        let v = [(0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0), (1.0, 2.0), (0.0, 2.0)];
        RoomFootprint::new("l", v.iter().map(|&(x, y)| Point2::new(x, y)).collect(), 0.0)
    }

    #[test]
    fn point_in_polygon_examples() {
        let sq = rect(1.0, 1.0);
        assert!(point_in_polygon(Point2::new(0.5, 0.5), &sq));
        assert!(!point_in_polygon(Point2::new(2.0, 2.0), &sq));
        // (1.5, 0.5) sits in the lower bar of the L; (1.5, 1.5) is the notch.
        assert!(point_in_polygon(Point2::new(1.5, 0.5), &l_shape()));
        assert!(!point_in_polygon(Point2::new(1.5, 1.5), &l_shape()));
    }

    #[test]
    fn sample_domain_examples() {
        let s = sample_domain(&rect(1.0, 1.0), 0.5, 1).unwrap();
        let expect = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)];
        assert_eq!(s, expect.iter().map(|&(x, y)| Point2::new(x, y)).collect::<Vec<_>>());
        assert_eq!(sample_domain(&rect(2.0, 2.0), 1.0, 1).unwrap().len(), 4);
        let err = sample_domain(&rect(1.0, 1.0), 10.0, 2).unwrap_err();
        assert!(err.to_string().contains("domain too coarse"));
    }

    #[test]
    fn single_seed_moves_to_square_centroid() {
        let samples = sample_domain(&rect(1.0, 1.0), 0.01, 1).unwrap();
        let (next, moved) = lloyd_step(&[Point2::new(0.1, 0.9)], &samples);
        assert!(next[0].distance(Point2::new(0.5, 0.5)) <= 0.005);
        assert!(moved > 0.5);
        let (again, moved) = lloyd_step(&next, &samples);
        assert_eq!(again, next);
        assert!(moved < 0.01 * 1e-6);
    }

    #[test]
    fn empty_cell_seed_stays_put() {
        let samples = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        let seeds = vec![Point2::new(0.5, 0.0), Point2::new(50.0, 50.0)];
        let (next, _) = lloyd_step(&seeds, &samples);
        assert_eq!(next[1], seeds[1]);
        // tie at x=0.5 goes to seed 0 for both samples
        assert_eq!(next[0], Point2::new(0.5, 0.0));
    }

    #[test]
    fn energy_of_centered_seed_on_unit_square() {
        // 2 * Var(U[0,1]) = 1/6; the midpoint grid of spacing h has
        // 2 * (1/12 - h^2/12) exactly.
        let h = 0.005;
        let samples = sample_domain(&rect(1.0, 1.0), h, 1).unwrap();
        let e = cvt_energy(&[Point2::new(0.5, 0.5)], &samples);
        assert!((e - (1.0 / 6.0 - h * h / 6.0)).abs() < 1e-9, "{e}");
        assert!((e - 1.0 / 6.0).abs() < 1e-4);
        assert_eq!(cvt_energy(&[Point2::new(0.3, 0.2)], &[Point2::new(0.3, 0.2)]), 0.0);
    }

    #[test]
    fn unit_square_plans_one_centered_station() {
        let plan = plan_stations(&rect(1.0, 1.0), &PlannerConfig::default(), 3).unwrap();
        assert_eq!(plan.stations.len(), 1);
        let s = plan.stations[0];
        assert!(Point2::new(s.x, s.y).distance(Point2::new(0.5, 0.5)) < 0.025 + 1e-9);
        assert_eq!(s.z, 1.5);
        assert!(plan.converged);
    }

    #[test]
    fn forty_square_meters_gets_two_stations_at_cell_centroids() {
        let room = rect(8.0, 5.0);
        let cfg = PlannerConfig::default();
        let plan = plan_stations(&room, &cfg, 11).unwrap();
        assert_eq!(plan.stations.len(), 2);
        // Dense-grid oracle: assign a 4x finer grid to the stations.
        let dense = sample_domain(&room, cfg.grid_resolution_m / 4.0, 2).unwrap();
        let seeds: Vec<_> = plan.stations.iter().map(|s| s.xy()).collect();
        let cents = VoronoiAssignment::compute(&seeds, &dense).centroids(2, &dense);
        for (s, c) in seeds.iter().zip(cents) {
            assert!(s.distance(c.unwrap()) < cfg.grid_resolution_m, "{s:?}");
        }
    }

    #[test]
    fn planning_is_deterministic() {
        let cfg = PlannerConfig::default();
        let a = plan_stations(&l_shape(), &PlannerConfig { coverage_area_m2: 0.5, ..cfg.clone() }, 5).unwrap();
        let b = plan_stations(&l_shape(), &PlannerConfig { coverage_area_m2: 0.5, ..cfg }, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stations.len(), 6);
    }

    #[test]
    fn plans_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let plan = plan_stations(&rect(6.0, 5.0), &PlannerConfig::default(), 1).unwrap();
        let path = dir.path().join("stations.toml");
        save_plans(std::slice::from_ref(&plan), &path).unwrap();
        assert_eq!(load_plans(&path).unwrap(), vec![plan]);
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = PlannerConfig { grid_resolution_m: 0.0, ..Default::default() };
        assert!(matches!(
            plan_stations(&rect(1.0, 1.0), &cfg, 0),
            Err(PlannerError::Config { field: "grid_resolution_m", .. })
        ));
    }
}
