//! Static 2-D k-d tree for nearest-neighbor and radius queries.
//!
//! Ties in distance break toward the lower original index, so query results
//! are reproducible across platforms and thread counts.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Node {
    point: [f64; 2],
    index: usize,
    axis: u8,
    left: Option<u32>,
    right: Option<u32>,
}

/// Balanced k-d tree over a fixed point set.
#[derive(Clone, Debug)]
pub struct KdTree {
    nodes: Vec<Node>,
    root: Option<u32>,
    len: usize,
}

impl KdTree {
    pub fn build(points: &[[f64; 2]]) -> Self {
        let mut items: Vec<([f64; 2], usize)> =
            points.iter().copied().enumerate().map(|(i, p)| (p, i)).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_rec(&mut items, 0, &mut nodes);
        Self { nodes, root, len: points.len() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Indices of the `m` nearest points to `query`, closest first.
    /// With `exclude_self`, points at distance exactly zero are skipped.
    pub fn knn(&self, query: [f64; 2], m: usize, exclude_self: bool) -> Result<Vec<usize>> {
        let zero_count = if exclude_self { self.count_at(query) } else { 0 };
        if m + zero_count > self.len {
            return Err(Error::InsufficientPoints {
                requested: m,
                available: self.len - zero_count,
            });
        }
        if m == 0 {
            return Ok(Vec::new());
        }
        // Max-heap of the current best m, keyed worst-first by (dist, index).
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(m + 1);
        if let Some(root) = self.root {
            self.search(root, query, m, exclude_self, &mut heap);
        }
        heap.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        Ok(heap.into_iter().map(|(_, i)| i).collect())
    }

    /// All points within `radius` of `query` (inclusive), unordered.
    pub fn within_radius(&self, query: [f64; 2], radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if let Some(root) = self.root {
            self.range_rec(root, query, radius, &mut out);
        }
        out
    }

    fn count_at(&self, query: [f64; 2]) -> usize {
        self.within_radius(query, 0.0)
            .iter()
            .filter(|(_, d)| *d == 0.0)
            .count()
    }

    fn search(
        &self,
        id: u32,
        query: [f64; 2],
        m: usize,
        exclude_self: bool,
        heap: &mut Vec<(f64, usize)>,
    ) {
        let node = &self.nodes[id as usize];
        let d = dist(node.point, query);
        if !(exclude_self && d == 0.0) {
            push_candidate(heap, m, (d, node.index));
        }
        let axis = node.axis as usize;
        let delta = query[axis] - node.point[axis];
        let (near, far) = if delta <= 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search(n, query, m, exclude_self, heap);
        }
        let worst = heap_worst(heap, m);
        if let Some(f) = far {
            if heap.len() < m || delta.abs() <= worst {
                self.search(f, query, m, exclude_self, heap);
            }
        }
    }

    fn range_rec(&self, id: u32, query: [f64; 2], radius: f64, out: &mut Vec<(usize, f64)>) {
        let node = &self.nodes[id as usize];
        let d = dist(node.point, query);
        if d <= radius {
            out.push((node.index, d));
        }
        let axis = node.axis as usize;
        let delta = query[axis] - node.point[axis];
        if delta <= radius {
            if let Some(l) = node.left {
                self.range_rec(l, query, radius, out);
            }
        }
        if -delta <= radius {
            if let Some(r) = node.right {
                self.range_rec(r, query, radius, out);
            }
        }
    }
}

fn build_rec(items: &mut [([f64; 2], usize)], depth: usize, nodes: &mut Vec<Node>) -> Option<u32> {
    if items.is_empty() {
        return None;
    }
    let axis = (depth % 2) as u8;
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |a, b| {
        a.0[axis as usize]
            .partial_cmp(&b.0[axis as usize])
            .unwrap()
            .then(a.1.cmp(&b.1))
    });
    let (point, index) = items[mid];
    let (left_items, rest) = items.split_at_mut(mid);
    let right_items = &mut rest[1..];
    let left = build_rec(left_items, depth + 1, nodes);
    let right = build_rec(right_items, depth + 1, nodes);
    nodes.push(Node { point, index, axis, left, right });
    Some((nodes.len() - 1) as u32)
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

#[inline]
fn heap_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn push_candidate(heap: &mut Vec<(f64, usize)>, m: usize, cand: (f64, usize)) {
    // Max-heap on (dist, index); keeps the m lexicographically smallest.
    if heap.len() < m {
        heap.push(cand);
        let mut i = heap.len() - 1;
        while i > 0 {
            let parent = (i - 1) / 2;
            if heap_less(heap[parent], heap[i]) {
                heap.swap(parent, i);
                i = parent;
            } else {
                break;
            }
        }
    } else if heap_less(cand, heap[0]) {
        heap[0] = cand;
        let mut i = 0;
        loop {
            let (l, r) = (2 * i + 1, 2 * i + 2);
            let mut largest = i;
            if l < heap.len() && heap_less(heap[largest], heap[l]) {
                largest = l;
            }
            if r < heap.len() && heap_less(heap[largest], heap[r]) {
                largest = r;
            }
            if largest == i {
                break;
            }
            heap.swap(i, largest);
            i = largest;
        }
    }
}

fn heap_worst(heap: &[(f64, usize)], m: usize) -> f64 {
    if heap.len() < m {
        f64::INFINITY
    } else {
        heap[0].0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn scan(points: &[[f64; 2]], q: [f64; 2], m: usize, exclude_self: bool) -> Vec<usize> {
        let mut cand: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, &p)| (dist(p, q), i))
            .filter(|&(d, _)| !(exclude_self && d == 0.0))
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        cand.truncate(m);
        cand.into_iter().map(|(_, i)| i).collect()
    }

    #[test]
    fn self_is_nearest() {
        let pts: Vec<[f64; 2]> = (0..5)
            .flat_map(|i| (0..5).map(move |j| [i as f64, j as f64]))
            .collect();
        let tree = KdTree::build(&pts);
        let got = tree.knn([2.0, 3.0], 1, false).unwrap();
        assert_eq!(got, vec![2 * 5 + 3]);
    }

    #[test]
    fn center_of_unit_square_sees_all_corners() {
        let pts = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let tree = KdTree::build(&pts);
        let mut got = tree.knn([0.5, 0.5], 4, false).unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2, 3]);
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = StdRng::seed_from_u64(99);
        let pts: Vec<[f64; 2]> = (0..200)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let tree = KdTree::build(&pts);
        for _ in 0..50 {
            let q = [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)];
            assert_eq!(tree.knn(q, 10, false).unwrap(), scan(&pts, q, 10, false));
        }
    }

    #[test]
    fn duplicate_coordinates_tie_break_by_index() {
        // Four coincident pairs around the query; scan and tree must agree.
        let pts = [
            [1.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.0, 1.0],
            [2.0, 0.0],
            [0.0, 0.0],
        ];
        let tree = KdTree::build(&pts);
        let got = tree.knn([0.0, 0.0], 5, false).unwrap();
        assert_eq!(got, scan(&pts, [0.0, 0.0], 5, false));
        assert_eq!(got[0], 5);
        assert_eq!(&got[1..5], &[0, 1, 2, 3]);

        let excl = tree.knn([0.0, 0.0], 5, true).unwrap();
        assert_eq!(excl, scan(&pts, [0.0, 0.0], 5, true));
    }

    #[test]
    fn insufficient_points_error() {
        let tree = KdTree::build(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            tree.knn([0.0, 0.0], 3, false),
            Err(Error::InsufficientPoints { .. })
        ));
        assert!(matches!(
            tree.knn([0.0, 0.0], 2, true),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn radius_query_matches_filter() {
        let mut rng = StdRng::seed_from_u64(5);
        let pts: Vec<[f64; 2]> = (0..150)
            .map(|_| [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)])
            .collect();
        let tree = KdTree::build(&pts);
        let q = [1.7, 2.2];
        let r = 0.9;
        let mut got: Vec<usize> = tree.within_radius(q, r).into_iter().map(|(i, _)| i).collect();
        got.sort_unstable();
        let expect: Vec<usize> = pts
            .iter()
            .enumerate()
            .filter(|(_, &p)| dist(p, q) <= r)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, expect);
    }
}
