//! Static 3-d tree over feature centroids.
//!
//! The tree is stored implicitly: `order` is a permutation of point indices laid
//! out so that the median of every subrange is that subtree's root. Neighbors
//! are ranked by `(squared distance, id)`, which makes ties deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::{squared_distance, FeatureId};

#[derive(Debug, Clone, Default)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    ids: Vec<FeatureId>,
    order: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist_sq: f64,
    id: FeatureId,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq.total_cmp(&other.dist_sq).then(self.id.cmp(&other.id))
    }
}

impl KdTree {
    pub fn build(points: Vec<[f64; 3]>, ids: Vec<FeatureId>) -> Self {
        assert_eq!(points.len(), ids.len());
        let mut order: Vec<usize> = (0..points.len()).collect();
        split(&points, &ids, &mut order, 0);
        Self { points, ids, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Up to `k` `(point index, squared distance)` pairs, nearest first,
    /// skipping the point whose id equals `exclude`.
    pub fn nearest(&self, query: &[f64; 3], k: usize, exclude: Option<FeatureId>) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(query, k, exclude, 0, self.order.len(), 0, &mut heap);
        heap.into_sorted_vec().into_iter().map(|c| (c.index, c.dist_sq)).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        query: &[f64; 3],
        k: usize,
        exclude: Option<FeatureId>,
        lo: usize,
        hi: usize,
        depth: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let index = self.order[mid];
        let id = self.ids[index];
        if Some(id) != exclude {
            let candidate = Candidate { dist_sq: squared_distance(query, &self.points[index]), id, index };
            if heap.len() < k {
                heap.push(candidate);
            } else if heap.peek().is_some_and(|worst| candidate < *worst) {
                heap.pop();
                heap.push(candidate);
            }
        }

        let axis = depth % 3;
        let diff = query[axis] - self.points[index][axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(query, k, exclude, near.0, near.1, depth + 1, heap);
        // `<=` keeps equal-distance points on the far side reachable for id tie-breaks.
        let visit_far = heap.len() < k || heap.peek().is_some_and(|worst| diff * diff <= worst.dist_sq);
        if visit_far {
            self.search(query, k, exclude, far.0, far.1, depth + 1, heap);
        }
    }
}

fn split(points: &[[f64; 3]], ids: &[FeatureId], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(ids[a].cmp(&ids[b]))
    });
    let (left, rest) = order.split_at_mut(mid);
    split(points, ids, left, depth + 1);
    split(points, ids, &mut rest[1..], depth + 1);
}
