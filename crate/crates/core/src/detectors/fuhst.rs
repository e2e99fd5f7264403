//! Feedback-updated half-space trees: an HST ensemble wrapped with
//! hysteresis score stabilization, a dual decision rule and a gated
//! ("safe") ensemble update.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{synthesize_features, FeatureVector, DEFAULT_K_MAX};
use super::hst::{HstEnsemble, HstParams};
use super::DetectionOutcome;
use crate::topology::NodeId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuHstParams {
    pub trees: usize,
    pub depth: usize,
    pub window: usize,
    /// Upper threshold; the lower one is `gamma * tau`.
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub p_update: f64,
    pub k_max: usize,
    /// When false the ensemble trains on every instance.
    pub safe_update: bool,
}

impl Default for FuHstParams {
    fn default() -> Self {
        Self {
            trees: 240,
            depth: 3,
            window: 120,
            tau: 0.55,
            gamma: 0.5,
            alpha: 0.5,
            beta: 0.9,
            p_update: 0.05,
            k_max: DEFAULT_K_MAX,
            safe_update: true,
        }
    }
}

impl FuHstParams {
    pub fn hst(&self) -> HstParams {
        HstParams { trees: self.trees, depth: self.depth, window: self.window }
    }

    pub fn tau_upper(&self) -> f64 {
        self.tau
    }

    pub fn tau_lower(&self) -> f64 {
        self.gamma * self.tau
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(open_unit(self.tau) && open_unit(self.gamma) && open_unit(self.alpha) && open_unit(self.beta)) {
            return Err(Error::config("tau, gamma, alpha and beta must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.p_update) {
            return Err(Error::config("p_update must lie in [0, 1]"));
        }
        if self.trees == 0 || self.window == 0 || self.k_max == 0 {
            return Err(Error::config("trees, window and k_max must be positive"));
        }
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::config("depth must lie in 1..=16"));
        }
        Ok(())
    }
}

/// Per-node smoothed score `s`, feedback `f` and maliciousness counter `c`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub s: f64,
    pub f: f64,
    pub c: u32,
}

/// Stabilization plus dual decision for one node. Returns the new state and
/// whether the node is flagged.
pub fn stabilize(prev: NodeState, raw: f64, params: &FuHstParams) -> (NodeState, bool) {
    let (upper, lower) = (params.tau_upper(), params.tau_lower());
    let mut next = if raw < lower {
        NodeState::default()
    } else {
        NodeState {
            s: params.alpha * prev.s + (1.0 - params.alpha) * raw,
            f: prev.f,
            c: prev.c + u32::from(raw > upper),
        }
    };
    let flagged = next.s > upper || (raw > upper && prev.f > upper);
    if flagged {
        next.f = params.beta * raw + (1.0 - params.beta) * prev.f;
    }
    (next, flagged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuHst {
    pub params: FuHstParams,
    pub ensemble: HstEnsemble,
    pub state: BTreeMap<NodeId, NodeState>,
    /// Instances admitted to the ensemble since construction.
    pub trained_instances: u64,
}

impl FuHst {
    pub fn new(params: FuHstParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let ensemble = HstEnsemble::new(params.hst(), FeatureVector::point_dim(params.k_max), seed);
        Ok(Self { params, ensemble, state: BTreeMap::new(), trained_instances: 0 })
    }

    pub fn node_state(&self, j: NodeId) -> NodeState {
        self.state.get(&j).copied().unwrap_or_default()
    }

    pub fn features(&self, j: NodeId, alerts: &[f64]) -> Option<FeatureVector> {
        synthesize_features(alerts, self.node_state(j).f, self.params.k_max)
    }

    fn train(&mut self, x: &[f64]) {
        self.ensemble.train(x);
        self.trained_instances += 1;
    }

    /// One detection round over the domain's nodes, in ascending id order.
    pub fn round(&mut self, received: &BTreeMap<NodeId, Vec<f64>>, rng_seed: u64) -> DetectionOutcome {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut out = DetectionOutcome::default();
        let upper = self.params.tau_upper();
        for (&j, alerts) in received {
            let Some(x) = self.features(j, alerts) else { continue };
            let point = x.to_point();
            let raw = self.ensemble.score(&point);
            let (next, flagged) = stabilize(self.node_state(j), raw, &self.params);
            self.state.insert(j, next);
            out.raw.insert(j, raw);
            out.scores.insert(j, next.s);
            if flagged {
                out.anomalous.insert(j);
            }
            let admit = if !self.params.safe_update || (next.s == 0.0 && next.c == 0) {
                true
            } else if next.s < upper {
                // U ~ Unif(0, 1]; admitted when U <= p_u.
                let u = 1.0 - rng.random::<f64>();
                u <= self.params.p_update
            } else {
                false
            };
            if admit {
                self.train(&point);
            }
        }
        out
    }

    /// Ingest every instance into the ensemble without scoring.
    pub fn train_only(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) {
        for (&j, alerts) in received {
            if let Some(x) = self.features(j, alerts) {
                self.train(&x.to_point());
            }
        }
    }

    pub fn reset_node_state(&mut self) {
        self.state.clear();
    }
}
