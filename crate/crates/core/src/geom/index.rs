use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Vec3;
use crate::error::{FscError, Result};

const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

/// Balanced k-d tree over a snapshot of points.
///
/// Queries are exact. Among points at equal distance the lower point index
/// wins, so results are a deterministic function of the input.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

/// Heap entry ordered by `(squared distance, index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn bbox_d2(lo: &Vec3, hi: &Vec3, q: &Vec3) -> f64 {
    let mut d2 = 0.0;
    for a in 0..3 {
        let d = if q[a] < lo[a] {
            lo[a] - q[a]
        } else if q[a] > hi[a] {
            q[a] - hi[a]
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}

impl NeighborIndex {
    pub fn new(points: &[Vec3]) -> Self {
        Self::with_leaf_size(points, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(points: &[Vec3], leaf_size: usize) -> Self {
        let leaf_size = leaf_size.max(1);
        let mut index = NeighborIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            leaf_size,
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            let p = &self.points[i];
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let id = self.nodes.len();
        self.nodes.push(Node { lo, hi, kind: NodeKind::Leaf { start, end } });
        if end - start <= self.leaf_size {
            return id;
        }
        let extent = hi - lo;
        let axis = extent.imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id].kind = NodeKind::Split { left, right };
        id
    }

    /// The `k` nearest points to `query`, ascending by distance.
    pub fn knn(&self, query: &Vec3, k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(FscError::InvalidValue("k must be positive".into()));
        }
        if k > self.points.len() {
            return Err(FscError::InsufficientPoints { requested: k, available: self.points.len() });
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_visit(0, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        Ok(out.into_iter().map(|c| (c.index, c.d2.sqrt())).collect())
    }

    fn knn_visit(&self, node: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        let n = &self.nodes[node];
        if heap.len() == k {
            let worst = heap.peek().map(|c| c.d2).unwrap_or(f64::INFINITY);
            if bbox_d2(&n.lo, &n.hi, q) > worst {
                return;
            }
        }
        match n.kind {
            NodeKind::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate { d2: (self.points[i] - q).norm_squared(), index: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            NodeKind::Split { left, right } => {
                let dl = bbox_d2(&self.nodes[left].lo, &self.nodes[left].hi, q);
                let dr = bbox_d2(&self.nodes[right].lo, &self.nodes[right].hi, q);
                let (first, second) = if dl <= dr { (left, right) } else { (right, left) };
                self.knn_visit(first, q, k, heap);
                self.knn_visit(second, q, k, heap);
            }
        }
    }

    /// Nearest stored point to `query`.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        self.knn(query, 1).ok().map(|v| v[0])
    }

    /// Indices (ascending) of all points with `|p - query|^2 <= r^2`.
    pub fn radius_neighbors(&self, query: &Vec3, r: f64) -> Vec<usize> {
        let mut out: Vec<usize> = self.radius_search(query, r).into_iter().map(|(i, _)| i).collect();
        out.sort_unstable();
        out
    }

    /// Like [`radius_neighbors`](Self::radius_neighbors) around stored point
    /// `index`, excluding `index` itself.
    pub fn radius_neighbors_of(&self, index: usize, r: f64) -> Vec<usize> {
        let q = self.points[index];
        let mut out = self.radius_neighbors(&q, r);
        out.retain(|&i| i != index);
        out
    }

    /// `(index, distance)` pairs within `r`, ascending by distance then index.
    pub fn radius_search(&self, query: &Vec3, r: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<Candidate> = Vec::new();
        if !(r > 0.0) || self.points.is_empty() {
            return Vec::new();
        }
        self.radius_visit(0, query, r * r, &mut out);
        out.sort();
        out.into_iter().map(|c| (c.index, c.d2.sqrt())).collect()
    }

    fn radius_visit(&self, node: usize, q: &Vec3, r2: f64, out: &mut Vec<Candidate>) {
        let n = &self.nodes[node];
        if bbox_d2(&n.lo, &n.hi, q) > r2 {
            return;
        }
        match n.kind {
            NodeKind::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 <= r2 {
                        out.push(Candidate { d2, index: i });
                    }
                }
            }
            NodeKind::Split { left, right } => {
                self.radius_visit(left, q, r2, out);
                self.radius_visit(right, q, r2, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Vec<Vec3> {
        (0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn self_match() {
        let pts = line();
        let idx = NeighborIndex::new(&pts);
        assert_eq!(idx.knn(&pts[2], 1).unwrap(), vec![(2, 0.0)]);
    }

    #[test]
    fn collinear_two_nearest() {
        let idx = NeighborIndex::with_leaf_size(&line(), 1);
        let r = idx.knn(&Vec3::new(0.9, 0.0, 0.0), 2).unwrap();
        assert_eq!(r[0].0, 1);
        assert_eq!(r[1].0, 0);
        assert!((r[0].1 - 0.1).abs() < 1e-12);
        assert!((r[1].1 - 0.9).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let idx = NeighborIndex::with_leaf_size(&pts, 1);
        let r = idx.knn(&Vec3::zeros(), 2).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn k_too_large() {
        let idx = NeighborIndex::new(&line());
        assert!(matches!(idx.knn(&Vec3::zeros(), 5), Err(FscError::InsufficientPoints { .. })));
    }

    #[test]
    fn lattice_axis_neighbors() {
        let mut pts = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    pts.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let idx = NeighborIndex::with_leaf_size(&pts, 2);
        let center = 9 + 3 + 1;
        assert_eq!(idx.radius_neighbors_of(center, 1.0).len(), 6);
    }

    #[test]
    fn sphere_origin_query_is_empty() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.37;
                let z = (i as f64 / 49.0) * 2.0 - 1.0;
                let r = (1.0 - z * z).sqrt();
                Vec3::new(r * t.cos(), r * t.sin(), z)
            })
            .collect();
        let idx = NeighborIndex::new(&pts);
        assert!(idx.radius_neighbors(&Vec3::zeros(), 0.5).is_empty());
    }
}
