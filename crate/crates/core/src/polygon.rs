//! Planar polygon predicates: shoelace area, simplicity, containment.

use crate::geometry::Point2;

/// Distance below which a point counts as lying on a polygon edge.
const ON_EDGE_EPS: f64 = 1e-12;

/// Shoelace signed area; positive for counter-clockwise vertex order.
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        twice += a.x * b.y - b.x * a.y;
    }
    0.5 * twice
}

#[inline]
fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    let len2 = a.distance_squared(b);
    if len2 == 0.0 {
        return p.distance_squared(a) <= ON_EDGE_EPS * ON_EDGE_EPS;
    }
    let cross = orient(a, b, p);
    // perpendicular distance = |cross| / len
    if cross * cross > ON_EDGE_EPS * ON_EDGE_EPS * len2 {
        return false;
    }
    let t = ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / len2;
    let slack = ON_EDGE_EPS / len2.sqrt();
    (-slack..=1.0 + slack).contains(&t)
}

/// True when closed segments `ab` and `cd` share at least one point.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

/// True when the closed polyline has no self-intersections, no zero-length
/// edges, and no edge folding back over its neighbor.
pub fn is_simple(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if poly[i] == poly[(i + 1) % n] {
            return false;
        }
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        for j in (i + 1)..n {
            let c = poly[j];
            let d = poly[(j + 1) % n];
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Neighbors share one vertex; anything more is an overlap.
                let (shared, other_ab, other_cd) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                if orient(other_ab, shared, other_cd) == 0.0 {
                    let u = (other_ab.x - shared.x, other_ab.y - shared.y);
                    let v = (other_cd.x - shared.x, other_cd.y - shared.y);
                    if u.0 * v.0 + u.1 * v.1 > 0.0 {
                        return false;
                    }
                }
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Even-odd containment with boundary points counted as inside.
pub fn contains(poly: &[Point2], p: Point2) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if on_segment(p, poly[i], poly[(i + 1) % n]) {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Axis-aligned bounds as `(min, max)`.
pub fn bounds(poly: &[Point2]) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}
