//! Detector warm-up on a benign run, alert-stream recording and replay.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackKind, PlacementPolicy};
use crate::detectors::{AnyDetector, Detector};
use crate::rng::{self, Stream};
use crate::topology::NodeId;
use crate::Result;

use super::config::{GraphSpec, MitigationScheme, ScenarioConfig};
use super::report::RunReport;
use super::sim::{DetectMode, SimOptions, Simulation};

pub const PRETRAIN_NODES: usize = 20;
pub const PRETRAIN_DEGREE: usize = 8;
pub const PRETRAIN_ROUNDS: u32 = 15;

/// The benign warm-up run for `base`: a 20-node 8-regular graph, 15
/// rounds, no attackers, same learner, task and alert rule.
pub fn pretraining_config(base: &ScenarioConfig) -> ScenarioConfig {
    ScenarioConfig {
        name: format!("{}-pretrain", base.name),
        graph: GraphSpec::Regular { n: PRETRAIN_NODES, k: PRETRAIN_DEGREE },
        attack: AttackKind::SignFlip,
        placement: PlacementPolicy::Random,
        malicious: 0,
        rounds: PRETRAIN_ROUNDS,
        mitigation: MitigationScheme::Observe,
        mitigation_start: 1,
        seed: rng::derive(base.seed, Stream::Pretrain, 0, 0),
        sticky_bans: true,
        pretrain: false,
        exclude_banned_from_accuracy: false,
        ..base.clone()
    }
}

/// Assembled alert vectors of a run, `rounds[t - 1][domain]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedStream {
    pub seed: u64,
    pub malicious: BTreeSet<NodeId>,
    pub rounds: Vec<Vec<BTreeMap<NodeId, Vec<f64>>>>,
}

impl RecordedStream {
    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }
}

/// Run `cfg` with every domain collecting alerts but taking no action on
/// them. Bans never happen, so the stream is what an observing detector
/// would see.
pub fn record_stream(cfg: &ScenarioConfig, options: SimOptions) -> Result<RecordedStream> {
    let cfg = ScenarioConfig { mitigation: MitigationScheme::Observe, ..cfg.clone() };
    let mut sim = Simulation::new(cfg)?
        .with_mode(DetectMode::RecordOnly)
        .with_options(SimOptions { record_alerts: true, keep_coordination: false, ..options });
    sim.run()?;
    let seed = sim.config().seed;
    let malicious = sim.malicious().clone();
    Ok(RecordedStream { seed, malicious, rounds: sim.into_recorded() })
}

/// Train on every vector of `stream`, then clear per-node memory.
pub fn pretrain_on(mut detector: AnyDetector, stream: &RecordedStream) -> AnyDetector {
    for round in &stream.rounds {
        for received in round {
            detector.train_only(received);
        }
    }
    detector.reset_node_state();
    detector
}

/// Record the warm-up stream for `base` and pretrain `detector` on it.
pub fn run_pretraining(detector: AnyDetector, base: &ScenarioConfig, options: SimOptions) -> Result<AnyDetector> {
    let stream = record_stream(&pretraining_config(base), options)?;
    Ok(pretrain_on(detector, &stream))
}

/// Feed a recorded stream to one copy of `detector` per domain, exactly as
/// an observing run would, and return the per-round decisions (nodes with
/// no alerts are not scored).
pub fn replay(detector: &AnyDetector, stream: &RecordedStream) -> Vec<BTreeMap<NodeId, bool>> {
    let n_domains = stream.rounds.first().map_or(0, Vec::len);
    let mut dets: Vec<AnyDetector> = (0..n_domains)
        .map(|_| {
            let mut d = detector.clone();
            d.reset_node_state();
            d
        })
        .collect();
    let mut out = Vec::with_capacity(stream.rounds.len());
    for (k, round) in stream.rounds.iter().enumerate() {
        let t = k as u64 + 1;
        let mut decisions = BTreeMap::new();
        for (d, received) in round.iter().enumerate() {
            let seed = rng::derive(stream.seed, Stream::DetectorRound, d as u64, t);
            let outcome = dets[d].detect(received, seed);
            for (j, v) in received {
                if !v.is_empty() {
                    decisions.insert(*j, outcome.anomalous.contains(j));
                }
            }
        }
        out.push(decisions);
    }
    out
}

/// Build, optionally pretrain, and run a scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    run_scenario_with(cfg, SimOptions::default())
}

pub fn run_scenario_with(cfg: &ScenarioConfig, options: SimOptions) -> Result<RunReport> {
    Ok(simulate(cfg, options)?.report())
}

/// Like [`run_scenario_with`] but hands back the finished simulation.
pub fn simulate(cfg: &ScenarioConfig, options: SimOptions) -> Result<Simulation> {
    cfg.validate()?;
    let mut sim = Simulation::new(cfg.clone())?.with_options(options);
    if cfg.pretrain && cfg.mitigation.detects() {
        let det = cfg.detector.build(rng::derive(cfg.seed, Stream::Detector, 0, 0))?;
        let det = run_pretraining(det, cfg, options)?;
        sim = sim.with_detector(&det);
    }
    sim.run()?;
    Ok(sim)
}
