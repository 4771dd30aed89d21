use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::kmeans::sq_dist;

#[derive(Clone, Debug)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Exact k-d tree over a fixed point set. Distances are squared
/// Euclidean; equal distances are ordered by a caller-supplied rank.
#[derive(Clone, Debug)]
pub struct KdTree {
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist: f64,
    rank: usize,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.rank.cmp(&other.rank))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn build(points: &[Vec<f64>]) -> Self {
        let mut tree = KdTree {
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build_rec(points, &mut idx);
        tree
    }

    fn build_rec(&mut self, points: &[Vec<f64>], idx: &mut [usize]) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let dim = points[idx[0]].len();
        let axis = (0..dim)
            .map(|a| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(points[i][a]), hi.max(points[i][a]))
                });
                (a, hi - lo)
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        idx.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        let mid = idx.len() / 2;
        let point = idx[mid];
        let slot = self.nodes.len();
        self.nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build_rec(points, lo);
        let right = self.build_rec(points, &mut rest[1..]);
        self.nodes[slot].left = left;
        self.nodes[slot].right = right;
        Some(slot)
    }

    /// The `k` points nearest to `query`, closest first, skipping
    /// `exclude`. `rank[i]` breaks distance ties (lower wins).
    pub fn knn(
        &self,
        points: &[Vec<f64>],
        query: &[f64],
        k: usize,
        exclude: Option<usize>,
        rank: &[usize],
    ) -> Vec<Neighbor> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            if let Some(root) = self.root {
                self.search(points, root, query, k, exclude, rank, &mut heap);
            }
        }
        heap.into_sorted_vec()
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        points: &[Vec<f64>],
        node: usize,
        query: &[f64],
        k: usize,
        exclude: Option<usize>,
        rank: &[usize],
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        let n = &self.nodes[node];
        if Some(n.point) != exclude {
            let cand = Neighbor {
                index: n.point,
                dist: sq_dist(query, &points[n.point]),
                rank: rank[n.point],
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap is full") {
                heap.pop();
                heap.push(cand);
            }
        }
        let diff = query[n.axis] - points[n.point][n.axis];
        let (near, far) = if diff <= 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(c) = near {
            self.search(points, c, query, k, exclude, rank, heap);
        }
        if let Some(c) = far {
            let worst = heap.peek().map_or(f64::INFINITY, |w| w.dist);
            if heap.len() < k || diff * diff <= worst {
                self.search(points, c, query, k, exclude, rank, heap);
            }
        }
    }
}
