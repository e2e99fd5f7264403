//! Scenario configuration, read from TOML. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackKind, PlacementPolicy};
use crate::aggregation::AlertRuleConfig;
use crate::detectors::DetectorConfig;
use crate::learning::{LearnerConfig, TaskConfig};
use crate::rng::{self, Stream};
use crate::topology::{generate_regular, generate_sbm_connected, MultiDomainGraph};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum GraphSpec {
    /// Stochastic block model. Give either `p1` or `target_degree`; the
    /// latter sets `p1 = target_degree / (mean domain size - 1)`.
    Sbm {
        nodes_per_domain: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p1: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_degree: Option<f64>,
        #[serde(default)]
        p2: f64,
    },
    /// Single-domain k-regular graph.
    Regular { n: usize, k: usize },
}

impl GraphSpec {
    pub fn n_nodes(&self) -> usize {
        match self {
            GraphSpec::Sbm { nodes_per_domain, .. } => nodes_per_domain.iter().sum(),
            GraphSpec::Regular { n, .. } => *n,
        }
    }

    pub fn n_domains(&self) -> usize {
        match self {
            GraphSpec::Sbm { nodes_per_domain, .. } => nodes_per_domain.len(),
            GraphSpec::Regular { .. } => 1,
        }
    }

    /// Resolved intra-domain edge probability (SBM only).
    pub fn p1(&self) -> Result<Option<f64>> {
        match self {
            GraphSpec::Sbm { p1: Some(_), target_degree: Some(_), .. } => {
                Err(Error::config("graph: give either p1 or target_degree, not both"))
            }
            GraphSpec::Sbm { p1: Some(p), .. } => Ok(Some(*p)),
            GraphSpec::Sbm { target_degree: Some(k), nodes_per_domain, .. } => {
                let mean = nodes_per_domain.iter().sum::<usize>() as f64 / nodes_per_domain.len().max(1) as f64;
                if mean < 2.0 {
                    return Err(Error::config("graph: target_degree needs domains of at least two nodes"));
                }
                Ok(Some((k / (mean - 1.0)).clamp(0.0, 1.0)))
            }
            GraphSpec::Sbm { .. } => Err(Error::config("graph: sbm needs p1 or target_degree")),
            GraphSpec::Regular { .. } => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GraphSpec::Sbm { nodes_per_domain, p2, .. } => {
                if nodes_per_domain.is_empty() || nodes_per_domain.contains(&0) {
                    return Err(Error::config("graph: every domain needs at least one node"));
                }
                let p1 = self.p1()?.unwrap_or_default();
                if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(p2) {
                    return Err(Error::config("graph: probabilities must lie in [0, 1]"));
                }
                Ok(())
            }
            GraphSpec::Regular { n, k } => {
                if k >= n || (n * k) % 2 == 1 {
                    return Err(Error::config(format!("graph: no simple {k}-regular graph on {n} nodes")));
                }
                Ok(())
            }
        }
    }

    pub fn build(&self, seed: u64) -> Result<MultiDomainGraph> {
        self.validate()?;
        let s = rng::derive(seed, Stream::Topology, 0, 0);
        match self {
            GraphSpec::Sbm { nodes_per_domain, p2, .. } => {
                generate_sbm_connected(nodes_per_domain, self.p1()?.unwrap_or_default(), *p2, s)
            }
            GraphSpec::Regular { n, k } => generate_regular(*n, *k, s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationScheme {
    /// No detection, no bans.
    NoAction,
    /// Detection with bans from `mitigation_start` on.
    Mitigate,
    /// The true malicious set is banned from `mitigation_start` on.
    Oracle,
    /// Detection every round, bans never issued.
    Observe,
}

impl MitigationScheme {
    pub fn label(&self) -> &'static str {
        match self {
            MitigationScheme::NoAction => "NA",
            MitigationScheme::Mitigate => "MIT",
            MitigationScheme::Oracle => "ORA",
            MitigationScheme::Observe => "OBS",
        }
    }

    pub fn detects(&self) -> bool {
        matches!(self, MitigationScheme::Mitigate | MitigationScheme::Observe)
    }
}

impl std::str::FromStr for MitigationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "na" | "no_action" => Ok(MitigationScheme::NoAction),
            "mit" | "mitigate" => Ok(MitigationScheme::Mitigate),
            "ora" | "oracle" => Ok(MitigationScheme::Oracle),
            "obs" | "observe" => Ok(MitigationScheme::Observe),
            other => Err(Error::config(format!("unknown mitigation scheme `{other}` (na, mit, ora, obs)"))),
        }
    }
}

/// What an IPM attacker averages over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpmKnowledge {
    /// Every honest node's update of the round.
    #[default]
    Global,
    /// Only the attacker's honest neighbors.
    Neighbors,
}

fn default_name() -> String {
    "custom".into()
}

fn default_rounds() -> u32 {
    20
}

fn default_one() -> u32 {
    1
}

fn default_true() -> bool {
    true
}

fn default_mitigation() -> MitigationScheme {
    MitigationScheme::Mitigate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub graph: GraphSpec,
    pub attack: AttackKind,
    pub placement: PlacementPolicy,
    pub malicious: usize,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub alert_rule: AlertRuleConfig,
    #[serde(default = "default_mitigation")]
    pub mitigation: MitigationScheme,
    /// First round whose decisions turn into bans (Mitigate, Oracle).
    #[serde(default = "default_one")]
    pub mitigation_start: u32,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub seed: u64,
    /// Once banned, always banned. When false a domain's bans are exactly
    /// its currently flagged nodes.
    #[serde(default = "default_true")]
    pub sticky_bans: bool,
    /// Warm the detector on a benign run before the scenario.
    #[serde(default = "default_true")]
    pub pretrain: bool,
    #[serde(default)]
    pub ipm_knowledge: IpmKnowledge,
    /// Drop banned benign nodes from the accuracy statistics.
    #[serde(default)]
    pub exclude_banned_from_accuracy: bool,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Parse { what: "scenario config", detail: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse { what: "scenario config", detail: e.to_string() })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.attack.validate()?;
        self.detector.validate()?;
        self.alert_rule.build()?;
        self.learner.validate()?;
        let n = self.graph.n_nodes();
        if self.malicious >= n {
            return Err(Error::config(format!("malicious = {} must be below the node count {n}", self.malicious)));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be positive"));
        }
        if self.mitigation_start == 0 {
            return Err(Error::config("mitigation_start counts rounds from 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        attack = { kind = "sign_flip" }
        placement = "random"
        malicious = 3

        [graph]
        kind = "sbm"
        nodes_per_domain = [20]
        target_degree = 8.0
    "#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.rounds, 20);
        assert_eq!(cfg.mitigation, MitigationScheme::Mitigate);
        assert_eq!(cfg.detector, DetectorConfig::default());
        assert!((cfg.graph.p1().unwrap().unwrap() - 8.0 / 19.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
        let nested = MINIMAL.replace("target_degree = 8.0", "target_degree = 8.0\nwhat = 2");
        assert!(ScenarioConfig::from_toml(&nested).is_err());
    }

    #[test]
    fn infeasible_configs_fail_early() {
        let too_many = MINIMAL.replace("malicious = 3", "malicious = 20");
        assert!(ScenarioConfig::from_toml(&too_many).is_err());
        let both = MINIMAL.replace("target_degree = 8.0", "target_degree = 8.0\np1 = 0.3");
        assert!(ScenarioConfig::from_toml(&both).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        let back = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn scheme_names_parse() {
        assert_eq!("na".parse::<MitigationScheme>().unwrap(), MitigationScheme::NoAction);
        assert_eq!("ORA".parse::<MitigationScheme>().unwrap(), MitigationScheme::Oracle);
        assert!("maybe".parse::<MitigationScheme>().is_err());
    }
}
