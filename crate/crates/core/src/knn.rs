//! Exact K-nearest-neighbor search with a vantage-point tree.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{DsneError, Result};

/// K nearest neighbors of every point, row-major N x K.
///
/// Rows never contain their own index, hold distinct indices, and are
/// ordered by ascending Euclidean distance with ties broken by index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    n: usize,
    k: usize,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborTable {
    /// Builds a table from explicit rows, validating the index invariants.
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(DsneError::usage("neighbor table needs K >= 1"));
        }
        let mut indices = Vec::with_capacity(n * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(DsneError::Dimension {
                    context: "neighbor table row",
                    expected: k,
                    found: row.len(),
                });
            }
            for (a, &j) in row.iter().enumerate() {
                if j >= n || j == i || row[..a].contains(&j) {
                    return Err(DsneError::usage(format!(
                        "invalid neighbor index {j} in row {i}"
                    )));
                }
            }
            indices.extend_from_slice(row);
        }
        Ok(NeighborTable {
            n,
            k,
            indices,
            distances: vec![f64::NAN; n * k],
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// Distances aligned with [`row`](Self::row); NaN for tables built with
    /// [`from_rows`](Self::from_rows).
    pub fn distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Node {
    item: usize,
    threshold: f64,
    inside: Option<usize>,
    outside: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Vantage-point tree over the rows of a point matrix.
#[derive(Debug, Clone)]
pub struct VpTree {
    points: Array2<f64>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

/// Builds a tree over the rows of `points`; vantage points are drawn from a
/// generator seeded with `seed`.
pub fn build_vptree(points: ArrayView2<'_, f64>, seed: u64) -> Result<VpTree> {
    let (n, d) = points.dim();
    if n < 2 {
        return Err(DsneError::usage(format!(
            "nearest-neighbor search needs at least 2 points, got {n}"
        )));
    }
    if d == 0 {
        return Err(DsneError::usage("points must have at least one coordinate"));
    }
    let points = points.as_standard_layout().into_owned();
    let mut tree = VpTree {
        points,
        nodes: Vec::with_capacity(n),
        root: None,
    };
    let mut items: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tree.root = tree.build(&mut items, &mut rng);
    Ok(tree)
}

impl VpTree {
    fn point(&self, i: usize) -> &[f64] {
        self.points.row(i).to_slice().expect("standard layout")
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    fn build(&mut self, items: &mut [usize], rng: &mut ChaCha8Rng) -> Option<usize> {
        if items.is_empty() {
            return None;
        }
        let pick = rng.random_range(0..items.len());
        items.swap(0, pick);
        let vp = items[0];
        let node_id = self.nodes.len();
        self.nodes.push(Node {
            item: vp,
            threshold: 0.0,
            inside: None,
            outside: None,
        });
        if items.len() == 1 {
            return Some(node_id);
        }

        let rest = &mut items[1..];
        let median = rest.len() / 2;
        let vp_point = self.point(vp).to_vec();
        rest.select_nth_unstable_by(median, |&a, &b| {
            let da = euclidean(&vp_point, self.point(a));
            let db = euclidean(&vp_point, self.point(b));
            da.total_cmp(&db).then(a.cmp(&b))
        });
        let threshold = euclidean(&vp_point, self.point(rest[median]));
        let (inside_items, outside_items) = rest.split_at_mut(median);
        let inside = self.build(inside_items, rng);
        let outside = self.build(outside_items, rng);
        let node = &mut self.nodes[node_id];
        node.threshold = threshold;
        node.inside = inside;
        node.outside = outside;
        Some(node_id)
    }

    /// The `k` nearest rows to row `query`, excluding `query` itself.
    pub fn query(&self, query: usize, k: usize) -> Vec<(usize, f64)> {
        let target = self.point(query);
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.search(root, target, query, k, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist)).collect()
    }

    fn search(
        &self,
        node_id: usize,
        target: &[f64],
        exclude: usize,
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let node = self.nodes[node_id];
        let dist = euclidean(self.point(node.item), target);
        if node.item != exclude {
            let cand = Candidate {
                dist,
                index: node.item,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if heap.peek().is_some_and(|worst| cand < *worst) {
                heap.pop();
                heap.push(cand);
            }
        }

        // A subtree is skipped only when every point in it is strictly
        // farther than the current k-th distance; the slack absorbs rounding
        // in the triangle inequality so equal-distance ties are still visited.
        let tau = |heap: &BinaryHeap<Candidate>| {
            if heap.len() < k {
                f64::INFINITY
            } else {
                let t = heap.peek().map_or(f64::INFINITY, |c| c.dist);
                t + 1e-9 * t.max(dist).max(node.threshold) + 1e-300
            }
        };
        let visit_inside = |heap: &BinaryHeap<Candidate>| dist - node.threshold <= tau(heap);
        let visit_outside = |heap: &BinaryHeap<Candidate>| node.threshold - dist <= tau(heap);

        if dist < node.threshold {
            if let Some(c) = node.inside.filter(|_| visit_inside(heap)) {
                self.search(c, target, exclude, k, heap);
            }
            if let Some(c) = node.outside.filter(|_| visit_outside(heap)) {
                self.search(c, target, exclude, k, heap);
            }
        } else {
            if let Some(c) = node.outside.filter(|_| visit_outside(heap)) {
                self.search(c, target, exclude, k, heap);
            }
            if let Some(c) = node.inside.filter(|_| visit_inside(heap)) {
                self.search(c, target, exclude, k, heap);
            }
        }
    }
}

/// Exact `k` nearest neighbors of every point in the tree.
pub fn knn_all(tree: &VpTree, k: usize) -> Result<NeighborTable> {
    let n = tree.len();
    if k == 0 || k >= n {
        return Err(DsneError::usage(format!(
            "K must satisfy 1 <= K <= N-1 (K={k}, N={n})"
        )));
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..n).into_par_iter().map(|i| tree.query(i, k)).collect();
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for row in rows {
        debug_assert_eq!(row.len(), k);
        for (j, d) in row {
            indices.push(j);
            distances.push(d);
        }
    }
    Ok(NeighborTable {
        n,
        k,
        indices,
        distances,
    })
}

/// Convenience wrapper: build a tree over `points` and query all rows.
pub fn nearest_neighbors(points: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<NeighborTable> {
    let tree = build_vptree(points, seed)?;
    knn_all(&tree, k)
}
