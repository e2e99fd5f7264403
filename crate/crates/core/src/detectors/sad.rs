//! Standard absolute deviation baseline: a running mean and dispersion over
//! the pooled stream of `1 - mean_alert`, scoring `|x - mu| / (sigma + eps)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DetectionOutcome;
use crate::topology::NodeId;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SadParams {
    pub threshold: f64,
}

impl Default for SadParams {
    fn default() -> Self {
        Self { threshold: 2.0 }
    }
}

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sad {
    pub params: SadParams,
    pub stats: RunningStats,
}

fn transformed(alerts: &[f64]) -> Option<f64> {
    if alerts.is_empty() {
        None
    } else {
        Some(1.0 - alerts.iter().sum::<f64>() / alerts.len() as f64)
    }
}

impl Sad {
    pub fn new(params: SadParams) -> Self {
        Self { params, stats: RunningStats::default() }
    }

    pub fn score(&self, x: f64) -> f64 {
        if self.stats.count == 0 {
            return 0.0;
        }
        (x - self.stats.mean).abs() / (self.stats.std() + EPS)
    }

    pub fn flags(&self, score: f64) -> bool {
        score > self.params.threshold
    }

    /// Scores every node against the state before the round, then folds the
    /// round's values into the state in ascending node order.
    pub fn round(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) -> DetectionOutcome {
        let mut out = DetectionOutcome::default();
        let values: Vec<(NodeId, f64)> = received
            .iter()
            .filter_map(|(&j, a)| transformed(a).map(|x| (j, x)))
            .collect();
        for &(j, x) in &values {
            let z = self.score(x);
            out.raw.insert(j, z);
            out.scores.insert(j, z);
            if self.flags(z) {
                out.anomalous.insert(j);
            }
        }
        values.iter().for_each(|&(_, x)| self.stats.push(x));
        out
    }

    pub fn train_only(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) {
        received.values().filter_map(|a| transformed(a)).for_each(|x| self.stats.push(x));
    }
}
