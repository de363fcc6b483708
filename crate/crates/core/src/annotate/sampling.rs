//! Area-weighted surface sampling of component meshes.
//!
//! Counts are fixed first: the component receives `max(1, round(density·A))`
//! points, split across triangles by area with largest-remainder rounding.
//! Inside a triangle the points are jittered-stratified: the triangle's plane
//! is tiled with square cells of the target spacing (random phase), each cell
//! receives its area share of the count (again largest remainder), and each
//! point is drawn uniformly inside its clipped cell. The result is uniform in
//! distribution but without the clumps and holes of independent draws, which
//! is what keeps nearest-sample distances below the transfer threshold.

use rand::Rng;

use crate::geometry::{triangle_area, Vec3};
use crate::seed::StreamRng;

/// Splits `total` into integer parts proportional to `weights`
/// (Hamilton / largest remainder). Ties go to the lower index.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || !(sum > 0.0) {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut rest = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order.into_iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

type P2 = (f64, f64);

fn clip_to_cell(poly: &[P2], x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<P2> {
    let mut out: Vec<P2> = poly.to_vec();
    // (axis, bound, keep when coordinate >= bound)
    for (axis, bound, keep_ge) in [(0, x0, true), (0, x1, false), (1, y0, true), (1, y1, false)] {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let coord = |p: P2| if axis == 0 { p.0 } else { p.1 };
        let inside = |p: P2| if keep_ge { coord(p) >= bound } else { coord(p) <= bound };
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            let (ci, pi) = (inside(cur), inside(prev));
            if ci != pi {
                let t = (bound - coord(prev)) / (coord(cur) - coord(prev));
                let x = prev.0 + t * (cur.0 - prev.0);
                let y = prev.1 + t * (cur.1 - prev.1);
                out.push(if axis == 0 { (bound, y) } else { (x, bound) });
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

fn area2(a: P2, b: P2, c: P2) -> f64 {
    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs()
}

fn uniform_in_triangle<R: Rng>(a: P2, b: P2, c: P2, rng: &mut R) -> P2 {
    let r1: f64 = rng.random::<f64>().sqrt();
    let r2: f64 = rng.random();
    let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
    (wa * a.0 + wb * b.0 + wc * c.0, wa * a.1 + wb * b.1 + wc * c.1)
}

/// `count` stratified samples on triangle `tri`.
pub fn sample_triangle(tri: &[Vec3; 3], count: usize, rng: &mut StreamRng) -> Vec<Vec3> {
    if count == 0 {
        return Vec::new();
    }
    let [a, b, c] = *tri;
    let area = triangle_area(a, b, c);
    let ab = b - a;
    let e1 = ab.normalized();
    let normal = ab.cross(c - a);
    let e2 = normal.cross(ab).normalized();
    let tri2 = [(0.0, 0.0), (ab.norm(), 0.0), ((c - a).dot(e1), (c - a).dot(e2))];
    let lift = |p: P2| a + e1 * p.0 + e2 * p.1;

    let h = (area / count as f64).sqrt();
    let (min_x, max_x) = tri2.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |m, p| (m.0.min(p.0), m.1.max(p.0)));
    let (min_y, max_y) = tri2.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |m, p| (m.0.min(p.1), m.1.max(p.1)));
    let gx0 = min_x - rng.random::<f64>() * h;
    let gy0 = min_y - rng.random::<f64>() * h;
    let nx = ((max_x - gx0) / h).ceil().max(1.0) as usize;
    let ny = ((max_y - gy0) / h).ceil().max(1.0) as usize;

    let mut cells: Vec<Vec<P2>> = Vec::new();
    let mut weights = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let x0 = gx0 + i as f64 * h;
            let y0 = gy0 + j as f64 * h;
            let piece = clip_to_cell(&tri2, x0, y0, x0 + h, y0 + h);
            if piece.len() < 3 {
                continue;
            }
            let w: f64 = (1..piece.len() - 1).map(|k| area2(piece[0], piece[k], piece[k + 1])).sum();
            if w > 0.0 {
                cells.push(piece);
                weights.push(w);
            }
        }
    }
    if cells.is_empty() {
        // Sliver below floating-point resolution of the grid: plain uniform draws.
        return (0..count).map(|_| lift(uniform_in_triangle(tri2[0], tri2[1], tri2[2], rng))).collect();
    }

    let per_cell = largest_remainder(&weights, count);
    let mut out = Vec::with_capacity(count);
    for ((piece, w), n) in cells.iter().zip(&weights).zip(per_cell) {
        for _ in 0..n {
            // Pick a fan triangle of the convex piece by area.
            let mut pick = rng.random::<f64>() * w;
            let mut k = 1;
            while k < piece.len() - 2 {
                let a = area2(piece[0], piece[k], piece[k + 1]);
                if pick < a {
                    break;
                }
                pick -= a;
                k += 1;
            }
            out.push(lift(uniform_in_triangle(piece[0], piece[k], piece[k + 1], rng)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[1.0, 3.0], 16), vec![4, 12]);
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.2, 0.5, 0.3], 1), vec![0, 1, 0]);
        assert_eq!(largest_remainder(&[], 5), Vec::<usize>::new());
    }

    #[test]
    fn clipping_a_triangle_to_a_cell() {
        let tri = [(0.0, 0.0), (2.0, 0.0), (0.0, 2.0)];
        let piece = clip_to_cell(&tri, 0.0, 0.0, 1.0, 1.0);
        // the unit cell lies entirely inside the triangle
        let a: f64 = (1..piece.len() - 1).map(|k| area2(piece[0], piece[k], piece[k + 1])).sum();
        assert!((a - 1.0).abs() < 1e-12);
        let piece = clip_to_cell(&tri, 1.0, 1.0, 2.0, 2.0);
        assert!(piece.len() < 3 || (1..piece.len() - 1).map(|k| area2(piece[0], piece[k], piece[k + 1])).sum::<f64>() < 1e-12);
    }

    #[test]
    fn exact_count_and_plane_membership() {
        let mut rng = StreamRng::seed_from_u64(1);
        let tri = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(3.0, 0.5, 1.0), Vec3::new(0.2, 2.0, -1.0)];
        let n = tri[1] - tri[0];
        let normal = n.cross(tri[2] - tri[0]).normalized();
        for count in [1, 2, 7, 100, 1234] {
            let pts = sample_triangle(&tri, count, &mut rng);
            assert_eq!(pts.len(), count);
            for p in pts {
                assert!((p - tri[0]).dot(normal).abs() < 1e-9);
            }
        }
    }
}
