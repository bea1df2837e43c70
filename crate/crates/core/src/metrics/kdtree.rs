//! Exact nearest-neighbor search over 3D points on a median-split k-d tree.

use crate::Vec3;

struct Node {
    /// Splitting value along `axis`; leaves store `axis == usize::MAX`.
    split: f64,
    axis: usize,
    left: usize,
    right: usize,
    /// Range into `order` for leaf nodes.
    lo: usize,
    hi: usize,
}

const LEAF_SIZE: usize = 12;

pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

impl KdTree {
    /// Build over a non-empty point set; indices returned by queries refer to
    /// the original slice order.
    pub fn build(points: &[Vec3]) -> KdTree {
        assert!(!points.is_empty(), "kd-tree over an empty set");
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        tree.root = tree.split(0, points.len());
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn coord(p: Vec3, axis: usize) -> f64 {
        match axis {
            0 => p.x,
            1 => p.y,
            _ => p.z,
        }
    }

    fn split(&mut self, lo: usize, hi: usize) -> usize {
        if hi - lo <= LEAF_SIZE {
            self.nodes.push(Node { split: 0.0, axis: usize::MAX, left: 0, right: 0, lo, hi });
            return self.nodes.len() - 1;
        }
        // widest-spread axis
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in &self.order[lo..hi] {
            let p = self.points[i as usize];
            for (axis, (mn, mx)) in min.iter_mut().zip(max.iter_mut()).enumerate() {
                let v = Self::coord(p, axis);
                *mn = mn.min(v);
                *mx = mx.max(v);
            }
        }
        let axis = (0..3).max_by(|&a, &b| {
            (max[a] - min[a]).partial_cmp(&(max[b] - min[b])).unwrap()
        }).unwrap();
        let mid = lo + (hi - lo) / 2;
        let points = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            Self::coord(points[a as usize], axis)
                .partial_cmp(&Self::coord(points[b as usize], axis))
                .unwrap()
        });
        let split = Self::coord(self.points[self.order[mid] as usize], axis);
        let left = self.split(lo, mid);
        let right = self.split(mid, hi);
        self.nodes.push(Node { split, axis, left, right, lo, hi: 0 });
        self.nodes.len() - 1
    }

    /// Index (into the build slice) and squared distance of the closest point.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: Vec3, best: &mut (usize, f64)) {
        let n = &self.nodes[node];
        if n.axis == usize::MAX {
            for &i in &self.order[n.lo..n.hi] {
                let d = q - self.points[i as usize];
                let d2 = d.dot(d);
                if d2 < best.1 {
                    *best = (i as usize, d2);
                }
            }
            return;
        }
        let delta = Self::coord(q, n.axis) - n.split;
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, q, best);
        if delta * delta < best.1 {
            self.search(far, q, best);
        }
    }
}
