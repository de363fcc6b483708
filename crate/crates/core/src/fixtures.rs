//! Built-in scenes and data used by the test suites and `spc fixture`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::annotate::sample_component_clouds;
use crate::cloud::{io_err, save_cloud, CloudError, PointCloud, PointRecord, Rgb};
use crate::dataset::{save_pool, DatasetError, SceneEntry, Source};
use crate::geometry::{Point2, Vec3};
use crate::labels::SemanticClass;
use crate::scene::{save_scene, Component, RoomFootprint, Scene, SceneError, TriangleMesh};
use crate::seed::{stream, tag};

/// Consistent color of each class in the built-in scenes.
pub fn class_color(class: SemanticClass) -> Rgb {
    Rgb(match class {
        SemanticClass::Ceiling => [230, 230, 225],
        SemanticClass::Floor => [150, 110, 80],
        SemanticClass::Wall => [200, 195, 180],
        SemanticClass::Beam => [120, 120, 130],
        SemanticClass::Column => [170, 160, 150],
        SemanticClass::Window => [110, 170, 220],
        SemanticClass::Door => [140, 80, 40],
        SemanticClass::Clutter => [60, 140, 60],
    })
}

#[derive(Debug, Default)]
struct MeshBuilder {
    mesh: TriangleMesh,
}

impl MeshBuilder {
    fn vertex(&mut self, v: Vec3) -> u32 {
        self.mesh.vertices.push(v);
        (self.mesh.vertices.len() - 1) as u32
    }

    /// Quad `a b c d` split along `a c`.
    fn quad(&mut self, a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> &mut Self {
        let i = [a, b, c, d].map(|v| self.vertex(v));
        self.mesh.triangles.push([i[0], i[1], i[2]]);
        self.mesh.triangles.push([i[0], i[2], i[3]]);
        self
    }

    /// Quad subdivided into an `n × n` grid with shared vertices.
    fn grid(&mut self, origin: Vec3, u: Vec3, v: Vec3, n: u32) -> &mut Self {
        let base = self.mesh.vertices.len() as u32;
        for j in 0..=n {
            for i in 0..=n {
                let (s, t) = (f64::from(i) / f64::from(n), f64::from(j) / f64::from(n));
                self.mesh.vertices.push(origin + u * s + v * t);
            }
        }
        let at = |i: u32, j: u32| base + j * (n + 1) + i;
        for j in 0..n {
            for i in 0..n {
                self.mesh.triangles.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                self.mesh.triangles.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            }
        }
        self
    }

    fn build(&mut self) -> TriangleMesh {
        std::mem::take(&mut self.mesh)
    }
}

fn component(id: impl Into<String>, class: SemanticClass, mesh: TriangleMesh) -> Component {
    Component { id: id.into(), class, mesh, color: class_color(class) }
}

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

fn rect_footprint(name: &str, x0: f64, y0: f64, x1: f64, y1: f64, floor_z: f64) -> RoomFootprint {
    RoomFootprint::new(
        name,
        vec![Point2::new(x0, y0), Point2::new(x1, y0), Point2::new(x1, y1), Point2::new(x0, y1)],
        floor_z,
    )
}

/// Floor, ceiling and four walls of the box `[x0,x1]×[y0,y1]×[z0,z1]`, each
/// face split into `n × n` cells. Component ids are prefixed with `prefix`.
fn room_shell(prefix: &str, lo: Vec3, hi: Vec3, n: u32) -> Vec<Component> {
    let (dx, dy, dz) = (v(hi.x - lo.x, 0.0, 0.0), v(0.0, hi.y - lo.y, 0.0), v(0.0, 0.0, hi.z - lo.z));
    let mut b = MeshBuilder::default();
    vec![
        component(format!("{prefix}floor"), SemanticClass::Floor, b.grid(lo, dx, dy, n).build()),
        component(format!("{prefix}ceiling"), SemanticClass::Ceiling, b.grid(lo + dz, dx, dy, n).build()),
        component(format!("{prefix}wall_south"), SemanticClass::Wall, b.grid(lo, dx, dz, n).build()),
        component(format!("{prefix}wall_north"), SemanticClass::Wall, b.grid(lo + dy, dx, dz, n).build()),
        component(format!("{prefix}wall_west"), SemanticClass::Wall, b.grid(lo, dy, dz, n).build()),
        component(format!("{prefix}wall_east"), SemanticClass::Wall, b.grid(lo + dx, dy, dz, n).build()),
    ]
}

/// Closed cube `[0,size]³` (floor, ceiling, four walls) with one square room.
pub fn closed_cube(size: f64) -> Scene {
    Scene {
        components: room_shell("", Vec3::ZERO, v(size, size, size), 1),
        rooms: vec![rect_footprint("cube", 0.0, 0.0, size, size, 0.0)],
    }
}

/// Geometry of the occluder added by [`cube_with_occluder`]: the panel
/// `x = 3`, `1 ≤ y ≤ 3`, `1 ≤ z ≤ 3`.
pub const OCCLUDER_X: f64 = 3.0;
pub const OCCLUDER_SPAN: (f64, f64) = (1.0, 3.0);

/// The 4 m cube with an interior vertical panel between the center and the
/// east wall.
pub fn cube_with_occluder() -> Scene {
    let mut scene = closed_cube(4.0);
    let (a, b) = OCCLUDER_SPAN;
    let mesh = MeshBuilder::default()
        .quad(v(OCCLUDER_X, a, a), v(OCCLUDER_X, b, a), v(OCCLUDER_X, b, b), v(OCCLUDER_X, a, b))
        .build();
    scene.components.push(component("occluder", SemanticClass::Clutter, mesh));
    scene
}

/// A 4 m cube tessellated into 1800 triangles per face plus `extra` random
/// interior triangles: at least 10⁴ triangles with many shared edges.
pub fn dense_scene(extra: usize, rng_seed: u64) -> Scene {
    let mut scene = Scene {
        components: room_shell("", Vec3::ZERO, v(4.0, 4.0, 4.0), 30),
        rooms: vec![rect_footprint("dense", 0.0, 0.0, 4.0, 4.0, 0.0)],
    };
    let mut rng = stream(rng_seed, &[tag("dense-fixture")]);
    let mut mesh = TriangleMesh::default();
    while mesh.triangles.len() < extra {
        let c = v(rng.random_range(0.3..3.7), rng.random_range(0.3..3.7), rng.random_range(0.3..3.7));
        let mut corner = || c + v(rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25));
        let tri = [corner(), corner(), corner()];
        if crate::geometry::triangle_area(tri[0], tri[1], tri[2]) < 1e-3 {
            continue;
        }
        let base = mesh.vertices.len() as u32;
        mesh.vertices.extend(tri);
        mesh.triangles.push([base, base + 1, base + 2]);
    }
    scene.components.push(component("debris", SemanticClass::Clutter, mesh));
    scene
}

/// Room layout of the three-room fixture: name, x/y extent.
pub const THREE_ROOMS: [(&str, [f64; 4]); 3] = [
    ("room_a", [0.0, 0.0, 5.0, 4.0]),
    ("room_b", [7.0, 0.0, 15.0, 5.0]),
    ("room_c", [17.0, 0.0, 27.0, 6.0]),
];
pub const ROOM_HEIGHT: f64 = 3.0;

/// Three separate closed rooms of 20, 40 and 60 m². Each has a floor, a
/// ceiling, four walls, a window and a door panel standing 0.1 m in front of
/// walls, a corner column, and a beam under the ceiling. No clutter.
pub fn three_room_scene() -> Scene {
    let mut components = Vec::new();
    let mut rooms = Vec::new();
    for (name, [x0, y0, x1, y1]) in THREE_ROOMS {
        let p = format!("{name}_");
        let h = ROOM_HEIGHT;
        components.extend(room_shell(&p, v(x0, y0, 0.0), v(x1, y1, h), 1));
        let mut b = MeshBuilder::default();

        // Window on the north wall, facing into the room.
        let (wx, wy) = (x0 + 1.0, y1 - 0.1);
        let window = b.quad(v(wx, wy, 1.0), v(wx + 1.2, wy, 1.0), v(wx + 1.2, wy, 2.0), v(wx, wy, 2.0)).build();
        components.push(component(format!("{p}window"), SemanticClass::Window, window));

        // Door on the south wall.
        let (dx, dy) = (x1 - 1.8, y0 + 0.1);
        let door = b.quad(v(dx, dy, 0.0), v(dx + 0.9, dy, 0.0), v(dx + 0.9, dy, 2.0), v(dx, dy, 2.0)).build();
        components.push(component(format!("{p}door"), SemanticClass::Door, door));

        // Column in the south-west corner: the two faces exposed to the room.
        let (cx, cy) = (x0 + 0.4, y0 + 0.4);
        let column = b
            .quad(v(cx, y0, 0.0), v(cx, cy, 0.0), v(cx, cy, h), v(cx, y0, h))
            .quad(v(x0, cy, 0.0), v(cx, cy, 0.0), v(cx, cy, h), v(x0, cy, h))
            .build();
        components.push(component(format!("{p}column"), SemanticClass::Column, column));

        // Beam spanning the room along y at mid x: two sides and the soffit.
        let (bx0, bx1, bz) = ((x0 + x1) / 2.0 - 0.15, (x0 + x1) / 2.0 + 0.15, h - 0.3);
        let beam = b
            .quad(v(bx0, y0, bz), v(bx1, y0, bz), v(bx1, y1, bz), v(bx0, y1, bz))
            .quad(v(bx0, y0, bz), v(bx0, y1, bz), v(bx0, y1, h), v(bx0, y0, h))
            .quad(v(bx1, y0, bz), v(bx1, y1, bz), v(bx1, y1, h), v(bx1, y0, h))
            .build();
        components.push(component(format!("{p}beam"), SemanticClass::Beam, beam));

        rooms.push(rect_footprint(name, x0, y0, x1, y1, 0.0));
    }
    Scene { components, rooms }
}

/// Stand-in for a co-registered real scan of `scene`: dense surface samples
/// with range noise and colors that vary over each surface.
pub fn reference_cloud(scene: &Scene, density: f64, noise_sigma: f64, rng_seed: u64) -> PointCloud {
    let clouds = sample_component_clouds(scene, density, rng_seed);
    let mut rng = stream(rng_seed, &[tag("reference-noise")]);
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let mut out = PointCloud::from_points(Vec::new());
    for c in clouds {
        for p in c.cloud.points {
            let jitter = v(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            let pos = p.position + jitter;
            out.points.push(PointRecord::new(pos).with_color(texture(c.color, pos)).with_label(c.class));
        }
    }
    out
}

fn texture(base: Rgb, p: Vec3) -> Rgb {
    let shade = 0.85 + 0.15 * ((p.x * 2.1).sin() * (p.y * 1.7).cos() + (p.z * 3.3).sin()) / 2.0;
    Rgb(base.0.map(|c| (f64::from(c) * shade).round().clamp(0.0, 255.0) as u8))
}

/// A labeled "real" scene: one room of `scene` sampled with noise plus a few
/// clutter boxes on the floor.
pub fn real_scene(scene: &Scene, room: &RoomFootprint, rng_seed: u64) -> PointCloud {
    let prefix = format!("{}_", room.name);
    let own = Scene {
        components: scene.components.iter().filter(|c| c.id.starts_with(&prefix)).cloned().collect(),
        rooms: vec![room.clone()],
    };
    let mut cloud = reference_cloud(&own, 60.0, 0.005, rng_seed);
    let mut rng = stream(rng_seed, &[tag("real-clutter")]);
    let (lo, hi) = crate::polygon::bounds(&room.polygon);
    for _ in 0..3 {
        let w = rng.random_range(0.4..1.0);
        let x = rng.random_range(lo.x + 0.6..hi.x - 0.6 - w);
        let y = rng.random_range(lo.y + 0.6..hi.y - 0.6 - w);
        let top = rng.random_range(0.4..1.0);
        for _ in 0..(w * w * 600.0) as usize {
            let p = v(x + rng.random_range(0.0..w), y + rng.random_range(0.0..w), room.floor_z + top);
            cloud.points.push(PointRecord::new(p).with_color(class_color(SemanticClass::Clutter)).with_label(SemanticClass::Clutter));
        }
    }
    cloud
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub manifest: PathBuf,
    pub reference: PathBuf,
    pub real_pool: PathBuf,
    pub config: PathBuf,
}

/// Number of real scenes written by [`write_three_room_fixture`].
pub const REAL_SCENES: usize = 4;

/// Writes the three-room scene, its reference scan, a pool of real scenes
/// and a pipeline config (relative paths) into `dir`.
pub fn write_three_room_fixture(dir: &Path, rng_seed: u64) -> Result<FixturePaths, FixtureError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let scene = three_room_scene();
    let manifest = save_scene(&scene, &dir.join("scene"))?;

    let reference = dir.join("reference.txt");
    save_cloud(&reference_cloud(&scene, 900.0, 0.002, rng_seed), &reference)?;

    let mut entries = Vec::new();
    for i in 0..REAL_SCENES {
        let room = &scene.rooms[i % scene.rooms.len()];
        let id = format!("real_{i:02}");
        let path = dir.join("real").join(format!("{id}.txt"));
        save_cloud(&real_scene(&scene, room, rng_seed.wrapping_add(i as u64 + 1)), &path)?;
        entries.push(SceneEntry::from_file(id, Source::Real, &path)?);
    }
    for e in &mut entries {
        e.path = e.path.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| e.path.clone());
    }
    let real_pool = dir.join("real_pool.toml");
    save_pool(&entries, &real_pool)?;

    let config = dir.join("config.toml");
    let text = format!(
        "scene = \"scene/manifest.toml\"\noutput = \"out\"\nseed = {rng_seed}\n\n\
         [annotation]\nreference_cloud = \"reference.txt\"\n\n\
         [mixing]\ntotal = 3\nreplicates = 3\nreal_pool = \"real_pool.toml\"\npoints_per_block = 512\n"
    );
    fs::write(&config, text).map_err(io_err(&config))?;
    Ok(FixturePaths { manifest, reference, real_pool, config })
}
