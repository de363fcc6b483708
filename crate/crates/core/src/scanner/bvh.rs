//! Bounding volume hierarchy over every scene triangle.
//!
//! Both the hierarchy and the exhaustive path run the same watertight
//! ray/triangle routine and the same `(t, primitive)` ordering, so they agree
//! bit-for-bit: the hierarchy only prunes boxes that cannot hold a closer hit.

use thiserror::Error;

use crate::geometry::Vec3;
use crate::scene::Scene;

const LEAF_SIZE: usize = 4;
/// Absolute box padding; far above the rounding error of any hit point.
const BOX_PAD: f64 = 1e-7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("empty scene: no triangles to index")]
    EmptyScene,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    const EMPTY: Aabb = Aabb {
        lo: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        hi: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    fn grow(self, p: Vec3) -> Aabb {
        Aabb { lo: self.lo.min(p), hi: self.hi.max(p) }
    }

    fn union(self, o: Aabb) -> Aabb {
        Aabb { lo: self.lo.min(o.lo), hi: self.hi.max(o.hi) }
    }

    fn padded(self) -> Aabb {
        let pad = Vec3::new(BOX_PAD, BOX_PAD, BOX_PAD);
        Aabb { lo: self.lo - pad, hi: self.hi + pad }
    }

    fn extent(self) -> Vec3 {
        self.hi - self.lo
    }

    fn surface_area(self) -> f64 {
        let e = self.extent();
        if e.x < 0.0 {
            return 0.0;
        }
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    /// Parametric entry distance along the ray, or `None` if the slab
    /// intervals do not overlap within `[0, t_max]`.
    #[inline]
    fn entry(&self, ray: &PreparedRay, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let o = ray.origin.axis(a);
            let (lo, hi) = (self.lo.axis(a), self.hi.axis(a));
            let inv = ray.inv_dir[a];
            if inv.is_infinite() {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let (mut tn, mut tf) = ((lo - o) * inv, (hi - o) * inv);
            if tn > tf {
                std::mem::swap(&mut tn, &mut tf);
            }
            t0 = t0.max(tn);
            t1 = t1.min(tf * (1.0 + 4.0 * f64::EPSILON));
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first primitive slot in `order`; interior: index of right child
    /// (the left child is always `self + 1`).
    offset: u32,
    /// Primitive count for leaves, 0 for interior nodes.
    count: u32,
}

/// Per-ray constants of the watertight test (axis permutation and shear).
#[derive(Debug, Clone, Copy)]
pub struct PreparedRay {
    origin: Vec3,
    inv_dir: [f64; 3],
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
}

impl PreparedRay {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        let d = dir.to_array();
        let kz = (0..3).max_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs())).unwrap_or(2);
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if d[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        Self {
            origin,
            inv_dir: [1.0 / d[0], 1.0 / d[1], 1.0 / d[2]],
            kx,
            ky,
            kz,
            sx: d[kx] / d[kz],
            sy: d[ky] / d[kz],
            sz: 1.0 / d[kz],
        }
    }

    /// Watertight ray/triangle intersection (Woop, Benthin & Wald). Returns
    /// the ray parameter of the hit, two-sided, without range checks.
    #[inline]
    pub fn intersect(&self, tri: &[Vec3; 3]) -> Option<f64> {
        let o = self.origin.to_array();
        let rel = |v: Vec3| {
            let v = v.to_array();
            [v[0] - o[0], v[1] - o[1], v[2] - o[2]]
        };
        let (a, b, c) = (rel(tri[0]), rel(tri[1]), rel(tri[2]));
        let (kx, ky, kz) = (self.kx, self.ky, self.kz);
        let ax = a[kx] - self.sx * a[kz];
        let ay = a[ky] - self.sy * a[kz];
        let bx = b[kx] - self.sx * b[kz];
        let by = b[ky] - self.sy * b[kz];
        let cx = c[kx] - self.sx * c[kz];
        let cy = c[ky] - self.sy * c[kz];
        let u = cx * by - cy * bx;
        let v = ax * cy - ay * cx;
        let w = bx * ay - by * ax;
        if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
            return None;
        }
        let det = u + v + w;
        if det == 0.0 {
            return None;
        }
        let t_scaled = u * (self.sz * a[kz]) + v * (self.sz * b[kz]) + w * (self.sz * c[kz]);
        Some(t_scaled / det)
    }
}

/// Nearest hit found by a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawHit {
    pub t: f64,
    /// Global primitive index (components in scene order, then triangles).
    pub primitive: u32,
}

#[inline]
fn closer(t: f64, prim: u32, best: &Option<RawHit>) -> bool {
    match best {
        None => true,
        Some(b) => t < b.t || (t == b.t && prim < b.primitive),
    }
}

/// Immutable acceleration structure mapping a ray to its nearest triangle.
#[derive(Debug, Clone)]
pub struct TriangleIndex {
    triangles: Vec<[Vec3; 3]>,
    /// `(component, local triangle)` for each global primitive.
    owners: Vec<(u32, u32)>,
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl TriangleIndex {
    pub fn build(scene: &Scene) -> Result<Self, IndexError> {
        let mut triangles = Vec::with_capacity(scene.triangle_count());
        let mut owners = Vec::with_capacity(triangles.capacity());
        for (ci, c) in scene.components.iter().enumerate() {
            for ti in 0..c.mesh.triangles.len() {
                triangles.push(c.mesh.corners(ti));
                owners.push((ci as u32, ti as u32));
            }
        }
        if triangles.is_empty() {
            return Err(IndexError::EmptyScene);
        }
        let bounds: Vec<Aabb> = triangles
            .iter()
            .map(|t| t.iter().fold(Aabb::EMPTY, |b, &p| b.grow(p)).padded())
            .collect();
        let centroids: Vec<Vec3> = triangles.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1);
        build_node(&mut nodes, &mut order, 0, &bounds, &centroids);
        Ok(Self { triangles, owners, nodes, order })
    }

    pub fn primitive_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn owner(&self, primitive: u32) -> (u32, u32) {
        self.owners[primitive as usize]
    }

    pub fn triangle(&self, primitive: u32) -> &[Vec3; 3] {
        &self.triangles[primitive as usize]
    }

    /// Nearest hit with `t_min < t <= t_max`, via the hierarchy.
    pub fn nearest(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Option<RawHit> {
        let ray = PreparedRay::new(origin, dir);
        let mut best: Option<RawHit> = None;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            let limit = best.map_or(t_max, |b| b.t);
            if node.bounds.entry(&ray, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                let range = node.offset as usize..(node.offset + node.count) as usize;
                for &prim in &self.order[range] {
                    if let Some(t) = ray.intersect(&self.triangles[prim as usize]) {
                        if t > t_min && t <= t_max && closer(t, prim, &best) {
                            best = Some(RawHit { t, primitive: prim });
                        }
                    }
                }
            } else {
                let left = ni + 1;
                let right = node.offset;
                // Visit the nearer child first.
                let el = self.nodes[left as usize].bounds.entry(&ray, limit);
                let er = self.nodes[right as usize].bounds.entry(&ray, limit);
                match (el, er) {
                    (Some(a), Some(b)) if a <= b => {
                        stack.push(right);
                        stack.push(left);
                    }
                    (Some(_), Some(_)) => {
                        stack.push(left);
                        stack.push(right);
                    }
                    (Some(_), None) => stack.push(left),
                    (None, Some(_)) => stack.push(right),
                    (None, None) => {}
                }
            }
        }
        best
    }

    /// Nearest hit by testing every triangle; the reference for `nearest`.
    pub fn nearest_exhaustive(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Option<RawHit> {
        let ray = PreparedRay::new(origin, dir);
        let mut best = None;
        for (prim, tri) in self.triangles.iter().enumerate() {
            if let Some(t) = ray.intersect(tri) {
                if t > t_min && t <= t_max && closer(t, prim as u32, &best) {
                    best = Some(RawHit { t, primitive: prim as u32 });
                }
            }
        }
        best
    }
}

fn build_node(nodes: &mut Vec<Node>, order: &mut [u32], start: usize, bounds: &[Aabb], centroids: &[Vec3]) -> u32 {
    let index = nodes.len() as u32;
    let node_bounds = order.iter().fold(Aabb::EMPTY, |b, &p| b.union(bounds[p as usize]));
    nodes.push(Node { bounds: node_bounds, offset: start as u32, count: order.len() as u32 });
    if order.len() <= LEAF_SIZE {
        return index;
    }
    let Some(mid) = split(order, bounds, centroids) else {
        return index;
    };
    let (left, right) = order.split_at_mut(mid);
    build_node(nodes, left, start, bounds, centroids);
    let right_index = build_node(nodes, right, start + mid, bounds, centroids);
    let n = &mut nodes[index as usize];
    n.offset = right_index;
    n.count = 0;
    index
}

/// Binned surface-area-heuristic split; reorders `order` and returns the split
/// point, or `None` when keeping a leaf is cheaper.
fn split(order: &mut [u32], bounds: &[Aabb], centroids: &[Vec3]) -> Option<usize> {
    const BINS: usize = 16;
    let cb = order.iter().fold(Aabb::EMPTY, |b, &p| b.grow(centroids[p as usize]));
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
    let (lo, span) = (cb.lo.axis(axis), ext.axis(axis));
    if span <= 0.0 {
        // All centroids coincide: split down the middle to bound leaf size.
        return Some(order.len() / 2);
    }
    let bin_of = |p: u32| (((centroids[p as usize].axis(axis) - lo) / span * BINS as f64) as usize).min(BINS - 1);
    let mut bin_bounds = [Aabb::EMPTY; BINS];
    let mut bin_count = [0usize; BINS];
    for &p in order.iter() {
        let b = bin_of(p);
        bin_bounds[b] = bin_bounds[b].union(bounds[p as usize]);
        bin_count[b] += 1;
    }
    let mut best = (f64::INFINITY, 0usize);
    for cut in 1..BINS {
        let (l, r) = (&bin_bounds[..cut], &bin_bounds[cut..]);
        let nl: usize = bin_count[..cut].iter().sum();
        let nr: usize = bin_count[cut..].iter().sum();
        if nl == 0 || nr == 0 {
            continue;
        }
        let al = l.iter().fold(Aabb::EMPTY, |a, &b| a.union(b)).surface_area();
        let ar = r.iter().fold(Aabb::EMPTY, |a, &b| a.union(b)).surface_area();
        let cost = al * nl as f64 + ar * nr as f64;
        if cost < best.0 {
            best = (cost, cut);
        }
    }
    if !best.0.is_finite() {
        return Some(order.len() / 2);
    }
    let mut mid = 0;
    for i in 0..order.len() {
        if bin_of(order[i]) < best.1 {
            order.swap(i, mid);
            mid += 1;
        }
    }
    Some(mid)
}
