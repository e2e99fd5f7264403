//! Baseline half-space trees: same features and ensemble as FU-HST, but a
//! node is flagged whenever its raw score exceeds `tau`, and every instance
//! is trained on. No stabilization, feedback or gating.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::{synthesize_features, FeatureVector};
use super::fuhst::FuHstParams;
use super::hst::HstEnsemble;
use super::DetectionOutcome;
use crate::topology::NodeId;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainHst {
    pub params: FuHstParams,
    pub ensemble: HstEnsemble,
}

impl PlainHst {
    pub fn new(params: FuHstParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let ensemble = HstEnsemble::new(params.hst(), FeatureVector::point_dim(params.k_max), seed);
        Ok(Self { params, ensemble })
    }

    fn point(&self, alerts: &[f64]) -> Option<Vec<f64>> {
        synthesize_features(alerts, 0.0, self.params.k_max).map(|x| x.to_point())
    }

    pub fn round(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) -> DetectionOutcome {
        let mut out = DetectionOutcome::default();
        for (&j, alerts) in received {
            let Some(x) = self.point(alerts) else { continue };
            let raw = self.ensemble.score(&x);
            out.raw.insert(j, raw);
            out.scores.insert(j, raw);
            if raw > self.params.tau {
                out.anomalous.insert(j);
            }
            self.ensemble.train(&x);
        }
        out
    }

    pub fn train_only(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) {
        for alerts in received.values() {
            if let Some(x) = self.point(alerts) {
                self.ensemble.train(&x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untrained_state_flags_everyone() {
        let mut d = PlainHst::new(FuHstParams { trees: 8, depth: 2, ..FuHstParams::default() }, 0).unwrap();
        let received: BTreeMap<NodeId, Vec<f64>> =
            (0..5).map(|j| (NodeId(j), vec![0.9, 0.95, 1.0])).collect();
        let out = d.round(&received);
        assert_eq!(out.anomalous.len(), 5);
        assert_eq!(out.raw[&NodeId(0)], 1.0);
    }

    #[test]
    fn threshold_is_strict() {
        let p = FuHstParams::default();
        assert!(0.56 > p.tau);
        assert!(0.55 <= p.tau);
    }
}
