//! Half-space trees over the unit hypercube.
//!
//! Every tree is a complete binary tree of depth `h` stored in heap order
//! (root 0, children `2k+1` / `2k+2`). Internal node splits one random
//! dimension at the midpoint of that node's workspace interval; points with
//! `x[q] < split` go left. Each node keeps a reference mass (previous window)
//! and a latest mass (current window); after `window` training instances the
//! latest profile becomes the reference.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HstParams {
    pub trees: usize,
    pub depth: usize,
    pub window: usize,
}

impl Default for HstParams {
    fn default() -> Self {
        Self { trees: 240, depth: 3, window: 120 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HstTree {
    /// Split dimension of each internal node.
    pub split_dim: Vec<usize>,
    pub split_value: Vec<f64>,
    pub reference: Vec<u32>,
    pub latest: Vec<u32>,
}

impl HstTree {
    fn build<R: Rng>(depth: usize, dims: usize, rng: &mut R) -> Self {
        let internal = (1usize << depth) - 1;
        let total = (1usize << (depth + 1)) - 1;
        let mut split_dim = Vec::with_capacity(internal);
        let mut split_value = Vec::with_capacity(internal);
        // Workspace box of each internal node, filled in heap order.
        let mut boxes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(total);
        boxes.push(vec![(0.0, 1.0); dims]);
        for k in 0..internal {
            let q = rng.random_range(0..dims);
            let (lo, hi) = boxes[k][q];
            let mid = 0.5 * (lo + hi);
            split_dim.push(q);
            split_value.push(mid);
            let mut left = boxes[k].clone();
            left[q].1 = mid;
            let mut right = boxes[k].clone();
            right[q].0 = mid;
            boxes.push(left);
            boxes.push(right);
        }
        Self { split_dim, split_value, reference: vec![0; total], latest: vec![0; total] }
    }

    pub fn internal_nodes(&self) -> usize {
        self.split_dim.len()
    }

    pub fn node_count(&self) -> usize {
        self.reference.len()
    }

    /// Heap indices from the root to the leaf containing `x`.
    pub fn path(&self, x: &[f64]) -> Vec<usize> {
        let mut node = 0;
        let mut out = vec![0];
        while node < self.internal_nodes() {
            node = if x[self.split_dim[node]] < self.split_value[node] { 2 * node + 1 } else { 2 * node + 2 };
            out.push(node);
        }
        out
    }

    pub fn leaf(&self, x: &[f64]) -> usize {
        *self.path(x).last().expect("path is never empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HstEnsemble {
    pub params: HstParams,
    pub dims: usize,
    pub trees: Vec<HstTree>,
    pub instances_in_window: usize,
    /// Set after the first window swap; before that the accumulating latest
    /// masses serve as the reference.
    pub warmed: bool,
}

impl HstEnsemble {
    pub fn new(params: HstParams, dims: usize, seed: u64) -> Self {
        assert!(params.trees > 0 && params.window > 0 && dims > 0, "degenerate HST parameters");
        let mut rng = rng::rng_for(seed, Stream::Detector, params.trees as u64, params.depth as u64);
        let trees = (0..params.trees).map(|_| HstTree::build(params.depth, dims, &mut rng)).collect();
        Self { params, dims, trees, instances_in_window: 0, warmed: false }
    }

    fn mass_profile<'a>(&self, tree: &'a HstTree) -> &'a [u32] {
        if self.warmed {
            &tree.reference
        } else {
            &tree.latest
        }
    }

    /// Raw mass score: sum over trees of leaf mass times `2^depth`.
    pub fn raw_mass(&self, x: &[f64]) -> f64 {
        let scale = (1u64 << self.params.depth) as f64;
        self.trees
            .iter()
            .map(|t| self.mass_profile(t)[t.leaf(x)] as f64 * scale)
            .sum()
    }

    /// Largest attainable raw mass: every tree holds the whole window in the
    /// point's leaf.
    pub fn max_mass(&self) -> f64 {
        (self.params.trees * self.params.window) as f64 * (1u64 << self.params.depth) as f64
    }

    /// Anomaly score in `[0, 1]`; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dims);
        (1.0 - self.raw_mass(x) / self.max_mass()).clamp(0.0, 1.0)
    }

    /// Add `x` to the latest window; swap windows after `window` instances.
    pub fn train(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dims);
        for tree in &mut self.trees {
            for node in tree.path(x) {
                tree.latest[node] += 1;
            }
        }
        self.instances_in_window += 1;
        if self.instances_in_window == self.params.window {
            for tree in &mut self.trees {
                std::mem::swap(&mut tree.reference, &mut tree.latest);
                tree.latest.iter_mut().for_each(|m| *m = 0);
            }
            self.instances_in_window = 0;
            self.warmed = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(trees: usize, depth: usize, window: usize, dims: usize, seed: u64) -> HstEnsemble {
        HstEnsemble::new(HstParams { trees, depth, window }, dims, seed)
    }

    #[test]
    fn tree_shape_and_nested_workspaces() {
        let e = small(3, 3, 4, 2, 1);
        for t in &e.trees {
            assert_eq!(t.node_count(), 15);
            assert_eq!(t.internal_nodes(), 7);
            // A child splitting the same dimension as its parent must split
            // inside the parent's half.
            for k in 1..t.internal_nodes() {
                let parent = (k - 1) / 2;
                if t.split_dim[k] == t.split_dim[parent] {
                    let went_left = k == 2 * parent + 1;
                    let ok = if went_left {
                        t.split_value[k] < t.split_value[parent]
                    } else {
                        t.split_value[k] > t.split_value[parent]
                    };
                    assert!(ok);
                }
            }
        }
    }

    #[test]
    fn untrained_ensemble_scores_one() {
        let e = small(5, 2, 8, 3, 0);
        assert_eq!(e.score(&[0.1, 0.5, 0.9]), 1.0);
    }

    #[test]
    fn window_swap_semantics() {
        let mut e = small(2, 2, 4, 2, 0);
        for _ in 0..3 {
            e.train(&[0.2, 0.7]);
        }
        assert!(!e.warmed);
        assert!(e.trees.iter().all(|t| t.reference.iter().all(|&m| m == 0)));
        e.train(&[0.2, 0.7]);
        assert!(e.warmed);
        assert_eq!(e.instances_in_window, 0);
        assert!(e.trees.iter().all(|t| t.latest.iter().all(|&m| m == 0)));
        assert!(e.trees.iter().all(|t| t.reference[0] == 4));
    }

    #[test]
    fn path_masses_grow_by_one_per_ingestion() {
        let mut e = small(1, 2, 100, 2, 7);
        let x = [0.3, 0.8];
        let path = e.trees[0].path(&x);
        assert_eq!(path.len(), 3);
        for n in 1..=5u32 {
            e.train(&x);
            for node in 0..e.trees[0].node_count() {
                let expect = if path.contains(&node) { n } else { 0 };
                assert_eq!(e.trees[0].latest[node], expect);
            }
        }
    }

    #[test]
    fn massed_half_scores_lower_than_empty_half() {
        let mut e = small(1, 1, 4, 1, 3);
        for _ in 0..4 {
            e.train(&[0.2]);
        }
        assert!(e.score(&[0.2]) < e.score(&[0.8]));
        assert_eq!(e.score(&[0.2]), 0.0);
        assert_eq!(e.score(&[0.8]), 1.0);
    }
}
