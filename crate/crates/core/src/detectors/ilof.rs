//! Incremental local outlier factor over a sliding window of feature points.
//!
//! The window keeps pairwise distances, k-distance neighborhoods, local
//! reachability densities and LOF values for every live point. Inserting or
//! evicting a point recomputes only the points whose neighborhood, whose
//! neighbors' k-distances, or whose neighbors' densities changed. When the
//! effective `k = min(k_max, n - 1)` changes, everything is recomputed.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::features::{synthesize_features, FeatureVector, DEFAULT_K_MAX};
use super::DetectionOutcome;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlofParams {
    pub neighbors: usize,
    pub threshold: f64,
    pub window: usize,
    pub k_max: usize,
}

impl Default for IlofParams {
    fn default() -> Self {
        Self { neighbors: 75, threshold: 1.13, window: 120, k_max: DEFAULT_K_MAX }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `a / b` with `inf / inf = 1` (duplicate clusters).
fn density_ratio(a: f64, b: f64) -> f64 {
    if a.is_infinite() && b.is_infinite() {
        1.0
    } else {
        a / b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofWindow {
    capacity: usize,
    k_max: usize,
    k: usize,
    points: Vec<Option<Vec<f64>>>,
    /// Live slots, oldest first.
    order: VecDeque<usize>,
    dist: Vec<Vec<f64>>,
    knn: Vec<Vec<usize>>,
    kdist: Vec<f64>,
    lrd: Vec<f64>,
    lof: Vec<f64>,
}

impl LofWindow {
    pub fn new(capacity: usize, k_max: usize) -> Self {
        assert!(capacity >= 2 && k_max >= 1, "degenerate LOF window");
        Self {
            capacity,
            k_max,
            k: 0,
            points: vec![None; capacity],
            order: VecDeque::with_capacity(capacity),
            dist: vec![vec![0.0; capacity]; capacity],
            knn: vec![Vec::new(); capacity],
            kdist: vec![0.0; capacity],
            lrd: vec![0.0; capacity],
            lof: vec![1.0; capacity],
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn k_for(&self, n: usize) -> usize {
        if n < 2 {
            0
        } else {
            self.k_max.min(n - 1)
        }
    }

    /// Points oldest first.
    pub fn points(&self) -> Vec<&[f64]> {
        self.order.iter().map(|&s| self.points[s].as_deref().expect("live slot")).collect()
    }

    /// LOF values aligned with [`LofWindow::points`].
    pub fn lof_values(&self) -> Vec<f64> {
        self.order.iter().map(|&s| self.lof[s]).collect()
    }

    pub fn lof_of(&self, slot: usize) -> f64 {
        self.lof[slot]
    }

    fn compute_knn(&self, p: usize) -> (Vec<usize>, f64) {
        let mut cand: Vec<(f64, usize)> = self
            .order
            .iter()
            .filter(|&&o| o != p)
            .map(|&o| (self.dist[p][o], o))
            .collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let kd = cand[self.k - 1].0;
        let nb = cand.iter().take_while(|c| c.0 <= kd).map(|c| c.1).collect();
        (nb, kd)
    }

    fn compute_lrd(&self, p: usize) -> f64 {
        let nb = &self.knn[p];
        let mean = nb.iter().map(|&o| self.kdist[o].max(self.dist[p][o])).sum::<f64>() / nb.len() as f64;
        if mean == 0.0 {
            f64::INFINITY
        } else {
            1.0 / mean
        }
    }

    fn compute_lof(&self, p: usize) -> f64 {
        let nb = &self.knn[p];
        nb.iter().map(|&o| density_ratio(self.lrd[o], self.lrd[p])).sum::<f64>() / nb.len() as f64
    }

    fn full_recompute(&mut self) {
        let live: Vec<usize> = self.order.iter().copied().collect();
        if self.k == 0 {
            live.iter().for_each(|&p| self.lof[p] = 1.0);
            return;
        }
        for &p in &live {
            let (nb, kd) = self.compute_knn(p);
            self.knn[p] = nb;
            self.kdist[p] = kd;
        }
        for &p in &live {
            self.lrd[p] = self.compute_lrd(p);
        }
        for &p in &live {
            self.lof[p] = self.compute_lof(p);
        }
    }

    /// Recompute neighborhoods of `touched` and propagate to densities and
    /// LOF values. `fresh` points are treated as fully changed.
    fn refresh(&mut self, touched: &BTreeSet<usize>, fresh: Option<usize>) {
        let mut kd_changed = BTreeSet::new();
        let mut nb_changed = BTreeSet::new();
        for &p in touched {
            let (nb, kd) = self.compute_knn(p);
            if kd != self.kdist[p] {
                kd_changed.insert(p);
            }
            if nb != self.knn[p] {
                nb_changed.insert(p);
            }
            self.knn[p] = nb;
            self.kdist[p] = kd;
        }
        if let Some(q) = fresh {
            kd_changed.insert(q);
            nb_changed.insert(q);
        }
        let live: Vec<usize> = self.order.iter().copied().collect();
        let mut lrd_dirty = nb_changed;
        for &p in &live {
            if self.knn[p].iter().any(|o| kd_changed.contains(o)) {
                lrd_dirty.insert(p);
            }
        }
        for &p in &lrd_dirty {
            self.lrd[p] = self.compute_lrd(p);
        }
        let mut lof_dirty = lrd_dirty.clone();
        for &p in &live {
            if self.knn[p].iter().any(|o| lrd_dirty.contains(o)) {
                lof_dirty.insert(p);
            }
        }
        for &p in &lof_dirty {
            self.lof[p] = self.compute_lof(p);
        }
    }

    fn evict_oldest(&mut self) {
        let Some(r) = self.order.pop_front() else { return };
        self.points[r] = None;
        let new_k = self.k_for(self.len());
        if new_k != self.k || new_k == 0 {
            self.k = new_k;
            self.full_recompute();
            return;
        }
        let touched: BTreeSet<usize> = self
            .order
            .iter()
            .copied()
            .filter(|&p| self.knn[p].contains(&r))
            .collect();
        self.refresh(&touched, None);
    }

    /// Insert `x`, evicting the oldest point when full. Returns its slot.
    pub fn insert(&mut self, x: Vec<f64>) -> usize {
        if self.len() == self.capacity {
            self.evict_oldest();
        }
        let q = self.points.iter().position(Option::is_none).expect("free slot after eviction");
        for &o in &self.order {
            let d = euclidean(&x, self.points[o].as_ref().expect("live slot"));
            self.dist[q][o] = d;
            self.dist[o][q] = d;
        }
        self.dist[q][q] = 0.0;
        self.points[q] = Some(x);
        self.order.push_back(q);
        let new_k = self.k_for(self.len());
        if new_k != self.k || new_k == 0 {
            self.k = new_k;
            self.full_recompute();
            return q;
        }
        let touched: BTreeSet<usize> = self
            .order
            .iter()
            .copied()
            .filter(|&p| p != q && self.dist[p][q] <= self.kdist[p])
            .collect();
        let (nb, kd) = self.compute_knn(q);
        self.knn[q] = nb;
        self.kdist[q] = kd;
        self.refresh(&touched, Some(q));
        q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ilof {
    pub params: IlofParams,
    pub window: LofWindow,
}

impl Ilof {
    pub fn new(params: IlofParams) -> Self {
        Self { params, window: LofWindow::new(params.window.max(2), params.neighbors.max(1)) }
    }

    fn point(&self, alerts: &[f64]) -> Option<Vec<f64>> {
        synthesize_features(alerts, 0.0, self.params.k_max).map(|x: FeatureVector| x.to_point())
    }

    pub fn round(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) -> DetectionOutcome {
        let mut out = DetectionOutcome::default();
        for (&j, alerts) in received {
            let Some(x) = self.point(alerts) else { continue };
            let slot = self.window.insert(x);
            if self.window.len() < 2 {
                continue;
            }
            let lof = self.window.lof_of(slot);
            out.raw.insert(j, lof);
            out.scores.insert(j, lof);
            if lof > self.params.threshold {
                out.anomalous.insert(j);
            }
        }
        out
    }

    pub fn train_only(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) {
        for alerts in received.values() {
            if let Some(x) = self.point(alerts) {
                self.window.insert(x);
            }
        }
    }
}
