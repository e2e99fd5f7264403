//! Streaming detectors over per-round alert features.
//!
//! Every detector consumes, for one domain and one round, the alert vector
//! each node received (`NodeId -> weights`) and returns per-node scores plus
//! the set of nodes it considers anomalous. Nodes with no alerts are skipped.

pub mod features;
pub mod fuhst;
pub mod hst;
pub mod ilof;
pub mod plain_hst;
pub mod sad;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use features::{synthesize_features, FeatureVector};
pub use fuhst::{FuHst, FuHstParams, NodeState};
pub use hst::{HstEnsemble, HstParams};
pub use ilof::{Ilof, IlofParams};
pub use plain_hst::PlainHst;
pub use sad::{Sad, SadParams};

use crate::topology::NodeId;
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    /// Decision score per node (smoothed for FU-HST, raw otherwise).
    pub scores: BTreeMap<NodeId, f64>,
    /// Raw detector output per node.
    pub raw: BTreeMap<NodeId, f64>,
    pub anomalous: BTreeSet<NodeId>,
}

pub trait Detector {
    fn name(&self) -> &'static str;

    fn detect(&mut self, received: &BTreeMap<NodeId, Vec<f64>>, rng_seed: u64) -> DetectionOutcome;

    /// Ingest a round without scoring (pre-training).
    fn train_only(&mut self, received: &BTreeMap<NodeId, Vec<f64>>);

    /// Forget per-node memory while keeping the learned model.
    fn reset_node_state(&mut self) {}
}

impl Detector for FuHst {
    fn name(&self) -> &'static str {
        "fu_hst"
    }

    fn detect(&mut self, received: &BTreeMap<NodeId, Vec<f64>>, rng_seed: u64) -> DetectionOutcome {
        self.round(received, rng_seed)
    }

    fn train_only(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) {
        FuHst::train_only(self, received)
    }

    fn reset_node_state(&mut self) {
        FuHst::reset_node_state(self)
    }
}

impl Detector for PlainHst {
    fn name(&self) -> &'static str {
        "hst"
    }

    fn detect(&mut self, received: &BTreeMap<NodeId, Vec<f64>>, _rng_seed: u64) -> DetectionOutcome {
        self.round(received)
    }

    fn train_only(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) {
        PlainHst::train_only(self, received)
    }
}

impl Detector for Sad {
    fn name(&self) -> &'static str {
        "sad"
    }

    fn detect(&mut self, received: &BTreeMap<NodeId, Vec<f64>>, _rng_seed: u64) -> DetectionOutcome {
        self.round(received)
    }

    fn train_only(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) {
        Sad::train_only(self, received)
    }
}

impl Detector for Ilof {
    fn name(&self) -> &'static str {
        "ilof"
    }

    fn detect(&mut self, received: &BTreeMap<NodeId, Vec<f64>>, _rng_seed: u64) -> DetectionOutcome {
        self.round(received)
    }

    fn train_only(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) {
        Ilof::train_only(self, received)
    }
}

/// Any of the built-in detectors; this is what snapshots store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnyDetector {
    FuHst(FuHst),
    Hst(PlainHst),
    Sad(Sad),
    Ilof(Ilof),
}

impl AnyDetector {
    fn inner(&self) -> &dyn Detector {
        match self {
            AnyDetector::FuHst(d) => d,
            AnyDetector::Hst(d) => d,
            AnyDetector::Sad(d) => d,
            AnyDetector::Ilof(d) => d,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Detector {
        match self {
            AnyDetector::FuHst(d) => d,
            AnyDetector::Hst(d) => d,
            AnyDetector::Sad(d) => d,
            AnyDetector::Ilof(d) => d,
        }
    }
}

impl Detector for AnyDetector {
    fn name(&self) -> &'static str {
        self.inner().name()
    }

    fn detect(&mut self, received: &BTreeMap<NodeId, Vec<f64>>, rng_seed: u64) -> DetectionOutcome {
        self.inner_mut().detect(received, rng_seed)
    }

    fn train_only(&mut self, received: &BTreeMap<NodeId, Vec<f64>>) {
        self.inner_mut().train_only(received)
    }

    fn reset_node_state(&mut self) {
        self.inner_mut().reset_node_state()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum DetectorConfig {
    FuHst(FuHstParams),
    Hst(FuHstParams),
    Sad(SadParams),
    Ilof(IlofParams),
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig::FuHst(FuHstParams::default())
    }
}

impl DetectorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorConfig::FuHst(_) => "fu_hst",
            DetectorConfig::Hst(_) => "hst",
            DetectorConfig::Sad(_) => "sad",
            DetectorConfig::Ilof(_) => "ilof",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DetectorConfig::FuHst(p) | DetectorConfig::Hst(p) => p.validate(),
            DetectorConfig::Sad(p) if p.threshold.is_nan() || p.threshold <= 0.0 => Err(Error::config("sad threshold must be > 0")),
            DetectorConfig::Ilof(p) if p.window < 2 || p.neighbors == 0 || p.k_max == 0 => {
                Err(Error::config("ilof needs window >= 2 and positive neighbors / k_max"))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, seed: u64) -> Result<AnyDetector> {
        self.validate()?;
        Ok(match *self {
            DetectorConfig::FuHst(p) => AnyDetector::FuHst(FuHst::new(p, seed)?),
            DetectorConfig::Hst(p) => AnyDetector::Hst(PlainHst::new(p, seed)?),
            DetectorConfig::Sad(p) => AnyDetector::Sad(Sad::new(p)),
            DetectorConfig::Ilof(p) => AnyDetector::Ilof(Ilof::new(p)),
        })
    }
}

pub const SNAPSHOT_FORMAT: &str = "fuhst-detector";
pub const SNAPSHOT_VERSION: u32 = 1;

/// On-disk detector state: a JSON object
/// `{"format": "fuhst-detector", "version": 1, "detector": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSnapshot {
    pub format: String,
    pub version: u32,
    pub detector: AnyDetector,
}

impl DetectorSnapshot {
    pub fn new(detector: AnyDetector) -> Self {
        Self { format: SNAPSHOT_FORMAT.into(), version: SNAPSHOT_VERSION, detector }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let snap: Self = serde_json::from_reader(r)?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Parse { what: "detector snapshot", detail: format!("unknown format `{}`", snap.format) });
        }
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Parse {
                what: "detector snapshot",
                detail: format!("unsupported version {} (expected {SNAPSHOT_VERSION})", snap.version),
            });
        }
        Ok(snap)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(file)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use rand::Rng;

    fn stream(seed: u64, rounds: usize, nodes: u32) -> Vec<BTreeMap<NodeId, Vec<f64>>> {
        let mut rng = rng::rng_for(seed, Stream::Detector, 77, 0);
        (0..rounds)
            .map(|_| {
                (0..nodes)
                    .map(|j| {
                        let k = rng.random_range(3..9);
                        (NodeId(j), (0..k).map(|_| 0.85 + 0.15 * rng.random::<f64>()).collect())
                    })
                    .collect()
            })
            .collect()
    }

    fn small() -> FuHstParams {
        FuHstParams { trees: 25, depth: 3, window: 40, ..FuHstParams::default() }
    }

    #[test]
    fn gate_off_fu_hst_matches_plain_hst_raw_scores() {
        let p = FuHstParams { safe_update: false, tau: 0.9, ..small() };
        let mut fu = FuHst::new(p, 3).unwrap();
        let mut plain = PlainHst::new(p, 3).unwrap();
        let data = stream(1, 30, 10);
        for r in &data[..10] {
            fu.train_only(r);
            plain.train_only(r);
        }
        for (t, r) in data[10..].iter().enumerate() {
            let a = fu.round(r, t as u64);
            let b = plain.round(r);
            // The identity holds while no feedback has been recorded.
            assert!(fu.state.values().all(|s| s.f == 0.0), "feedback became non-zero at round {t}");
            assert_eq!(a.raw, b.raw, "round {t}");
        }
    }

    #[test]
    fn identical_streams_give_identical_flags() {
        let configs = [
            DetectorConfig::FuHst(small()),
            DetectorConfig::Hst(small()),
            DetectorConfig::Sad(SadParams::default()),
            DetectorConfig::Ilof(IlofParams { window: 40, ..IlofParams::default() }),
        ];
        let data = stream(9, 12, 8);
        for cfg in configs {
            let mut a = cfg.build(5).unwrap();
            let mut b = cfg.build(5).unwrap();
            for (t, r) in data.iter().enumerate() {
                assert_eq!(a.detect(r, t as u64), b.detect(r, t as u64), "{}", cfg.name());
            }
        }
    }

    #[test]
    fn scores_lie_in_unit_interval() {
        for cfg in [DetectorConfig::FuHst(small()), DetectorConfig::Hst(small())] {
            let mut d = cfg.build(2).unwrap();
            for (t, r) in stream(4, 15, 8).iter().enumerate() {
                let out = d.detect(r, t as u64);
                assert!(out.scores.values().chain(out.raw.values()).all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn zero_update_probability_never_trains_on_suspect_instances() {
        let p = FuHstParams { p_update: 0.0, ..small() };
        let mut d = FuHst::new(p, 8).unwrap();
        for (t, r) in stream(6, 20, 8).iter().enumerate() {
            let before = d.trained_instances;
            let prev = d.state.clone();
            d.round(r, t as u64);
            let admitted = d.trained_instances - before;
            let safe = r
                .keys()
                .filter(|j| {
                    let s = d.state[j];
                    s.s == 0.0 && s.c == 0
                })
                .count() as u64;
            assert_eq!(admitted, safe, "round {t}, previous state {prev:?}");
        }
    }

    #[test]
    fn config_parses_from_tagged_toml() {
        let cfg: DetectorConfig = toml::from_str("name = \"fu_hst\"\ntau = 0.6\n").unwrap();
        match cfg {
            DetectorConfig::FuHst(p) => {
                assert_eq!(p.tau, 0.6);
                assert_eq!(p.trees, 240);
            }
            other => panic!("unexpected {other:?}"),
        }
        let sad: DetectorConfig = toml::from_str("name = \"sad\"").unwrap();
        assert_eq!(sad, DetectorConfig::Sad(SadParams::default()));
        assert!(toml::from_str::<DetectorConfig>("name = \"fu_hst\"\ntua = 0.6\n").is_err());
        assert!(toml::from_str::<DetectorConfig>("name = \"forest\"").is_err());
    }

    #[test]
    fn snapshot_round_trip_preserves_behaviour() {
        let data = stream(2, 12, 6);
        for cfg in [
            DetectorConfig::FuHst(small()),
            DetectorConfig::Hst(small()),
            DetectorConfig::Sad(SadParams::default()),
            DetectorConfig::Ilof(IlofParams { window: 30, ..IlofParams::default() }),
        ] {
            let mut d = cfg.build(1).unwrap();
            for (t, r) in data[..6].iter().enumerate() {
                d.detect(r, t as u64);
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("snap.json");
            DetectorSnapshot::new(d.clone()).save(&path).unwrap();
            let mut back = DetectorSnapshot::load(&path).unwrap().detector;
            assert_eq!(back, d);
            for (t, r) in data[6..].iter().enumerate() {
                assert_eq!(back.detect(r, t as u64), d.detect(r, t as u64));
            }
        }
    }

    #[test]
    fn snapshot_rejects_wrong_version() {
        let d = DetectorConfig::Sad(SadParams::default()).build(0).unwrap();
        let mut v = serde_json::to_value(DetectorSnapshot::new(d)).unwrap();
        v["version"] = 2.into();
        assert!(DetectorSnapshot::read_from(v.to_string().as_bytes()).is_err());
    }
}
