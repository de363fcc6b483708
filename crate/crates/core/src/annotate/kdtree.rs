use crate::geometry::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, right: u32 },
}

/// Static 3-d tree answering exact nearest-neighbor queries.
///
/// Results match an exhaustive scan exactly: same squared-distance formula,
/// and ties go to the lowest point index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    perm: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut perm: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            build(&points, &mut perm, 0, &mut nodes);
        }
        Self { points, perm, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// `(index, squared distance)` of the nearest point; `None` when empty.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (u32::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        Some((best.0 as usize, best.1))
    }

    fn search(&self, ni: u32, q: Vec3, best: &mut (u32, f64)) {
        match self.nodes[ni as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start as usize..end as usize] {
                    let d = q.distance_squared(self.points[i as usize]);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split { axis, value, right } => {
                let diff = q.axis(axis as usize) - value;
                let (near, far) = if diff < 0.0 { (ni + 1, right) } else { (right, ni + 1) };
                self.search(near, q, best);
                // `<=` keeps equal-distance candidates reachable for the tie-break.
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &[Vec3], perm: &mut [u32], start: usize, nodes: &mut Vec<Node>) -> u32 {
    let index = nodes.len() as u32;
    if perm.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { start: start as u32, end: (start + perm.len()) as u32 });
        return index;
    }
    let (mut lo, mut hi) = (points[perm[0] as usize], points[perm[0] as usize]);
    for &i in perm.iter() {
        lo = lo.min(points[i as usize]);
        hi = hi.max(points[i as usize]);
    }
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
    let mid = perm.len() / 2;
    perm.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize].axis(axis).total_cmp(&points[b as usize].axis(axis)).then(a.cmp(&b))
    });
    let value = points[perm[mid] as usize].axis(axis);
    nodes.push(Node::Split { axis: axis as u8, value, right: 0 });
    let (left, right) = perm.split_at_mut(mid);
    build(points, left, start, nodes);
    let right_index = build(points, right, start + mid, nodes);
    nodes[index as usize] = Node::Split { axis: axis as u8, value, right: right_index };
    index
}
