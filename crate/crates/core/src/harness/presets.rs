//! The eight validation scenarios.

use crate::adversary::{AttackKind, PlacementPolicy};
use crate::aggregation::AlertRuleConfig;
use crate::detectors::DetectorConfig;
use crate::learning::{LearnerConfig, TaskConfig};
use crate::{Error, Result};

use super::config::{GraphSpec, IpmKnowledge, MitigationScheme, ScenarioConfig};

pub const PRESET_NAMES: [&str; 8] = ["s1", "s2", "s3", "s4", "s5", "s6", "s7", "s8"];

/// Average intra-domain degree targeted by every preset.
pub const TARGET_DEGREE: f64 = 8.0;

fn scenario(
    name: &str,
    sizes: &[usize],
    p2: f64,
    malicious: usize,
    placement: PlacementPolicy,
    attack: AttackKind,
) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        graph: GraphSpec::Sbm { nodes_per_domain: sizes.to_vec(), p1: None, target_degree: Some(TARGET_DEGREE), p2 },
        attack,
        placement,
        malicious,
        rounds: 20,
        detector: DetectorConfig::default(),
        alert_rule: AlertRuleConfig::default(),
        mitigation: MitigationScheme::Mitigate,
        mitigation_start: 1,
        learner: LearnerConfig::default(),
        task: TaskConfig::default(),
        seed: 0,
        sticky_bans: true,
        pretrain: true,
        ipm_knowledge: IpmKnowledge::Global,
        exclude_banned_from_accuracy: false,
    }
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    use AttackKind::SignFlip;
    use PlacementPolicy::*;
    let one = [20];
    let two = [20, 20];
    let three = [14, 13, 13];
    Ok(match name.to_ascii_lowercase().as_str() {
        "s1" => scenario("s1", &one, 0.0, 3, Random, AttackKind::noise()),
        "s2" => scenario("s2", &one, 0.0, 3, Random, AttackKind::ipm()),
        "s3" => scenario("s3", &one, 0.0, 3, Random, SignFlip),
        "s4" => scenario("s4", &two, 0.02, 4, Distributed, SignFlip),
        "s5" => scenario("s5", &two, 0.02, 4, Distributed, AttackKind::ipm()),
        "s6" => scenario("s6", &three, 0.03, 3, InterDomainAttacks, SignFlip),
        "s7" => scenario("s7", &three, 0.03, 3, InterDomainAttacks, AttackKind::ipm()),
        "s8" => scenario("s8", &three, 0.03, 3, NoInterDomainAttacks, AttackKind::ipm()),
        other => return Err(Error::config(format!("unknown preset `{other}` (s1..s8)"))),
    })
}

/// One line per preset: name, D, (N, M), p2, placement, attack.
pub fn describe(cfg: &ScenarioConfig) -> String {
    let p2 = match &cfg.graph {
        GraphSpec::Sbm { p2, .. } if cfg.graph.n_domains() > 1 => format!("{p2}"),
        _ => "--".into(),
    };
    format!(
        "{:<3} D={} (N={}, M={}) p2={:<5} {:<24} {}",
        cfg.name,
        cfg.graph.n_domains(),
        cfg.graph.n_nodes(),
        cfg.malicious,
        p2,
        cfg.placement.label(),
        cfg.attack.label()
    )
}
