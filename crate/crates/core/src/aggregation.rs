//! Ban-aware neighbor aggregation with per-neighbor trust alerts.
//!
//! An [`AlertRule`] assigns each received update a weight in `[0, 1]`. The
//! same weight serves as the node's alert about that neighbor and as its
//! mixing weight; the node's own model always enters with weight 1.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::learning::ParamVector;
use crate::topology::NodeId;
use crate::{Error, Result};

/// Trust signal from `rater` about the update `rated` sent at `round`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub rater: NodeId,
    pub rated: NodeId,
    pub round: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome {
    pub new_params: ParamVector,
    pub alerts: Vec<AlertRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BanList {
    pub banned: BTreeSet<NodeId>,
    pub as_of_round: u32,
}

impl BanList {
    pub fn contains(&self, j: NodeId) -> bool {
        self.banned.contains(&j)
    }

    pub fn len(&self) -> usize {
        self.banned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.banned.is_empty()
    }
}

/// Drop every update whose sender is banned.
pub fn apply_ban_filter<'a>(
    received: &BTreeMap<NodeId, &'a ParamVector>,
    bans: &BanList,
) -> BTreeMap<NodeId, &'a ParamVector> {
    received
        .iter()
        .filter(|(j, _)| !bans.contains(**j))
        .map(|(&j, &u)| (j, u))
        .collect()
}

/// Maps `(own, received)` to one trust weight per received update.
pub trait AlertRule: Send + Sync {
    fn name(&self) -> &'static str;

    /// Weights in `[0, 1]`, aligned with `received`.
    fn weigh(&self, own: &ParamVector, received: &[&ParamVector]) -> Vec<f64>;
}

/// Every neighbor fully trusted; the aggregate is the plain mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRule;

impl AlertRule for UniformRule {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn weigh(&self, _own: &ParamVector, received: &[&ParamVector]) -> Vec<f64> {
        vec![1.0; received.len()]
    }
}

/// Geometric trust rule: Gaussian kernel of each update's distance to the
/// coordinate-wise median of `{own} ∪ received`, with bandwidth
/// `scale_factor * (median distance + 1e-9)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustGaussRule {
    pub scale_factor: f64,
}

impl Default for TrustGaussRule {
    fn default() -> Self {
        Self { scale_factor: 2.5 }
    }
}

const SCALE_EPS: f64 = 1e-9;

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn coordinate_median(vectors: &[&ParamVector]) -> ParamVector {
    let dim = vectors[0].dim();
    let mut column = vec![0.0; vectors.len()];
    ParamVector(
        (0..dim)
            .map(|k| {
                column.iter_mut().zip(vectors).for_each(|(c, v)| *c = v.0[k]);
                median(&mut column)
            })
            .collect(),
    )
}

impl AlertRule for TrustGaussRule {
    fn name(&self) -> &'static str {
        "trust_gauss"
    }

    fn weigh(&self, own: &ParamVector, received: &[&ParamVector]) -> Vec<f64> {
        if received.is_empty() {
            return Vec::new();
        }
        let mut pool: Vec<&ParamVector> = Vec::with_capacity(received.len() + 1);
        pool.push(own);
        pool.extend_from_slice(received);
        let reference = coordinate_median(&pool);
        let distances: Vec<f64> = received.iter().map(|u| u.distance(&reference)).collect();
        let sigma = self.scale_factor * (median(&mut distances.clone()) + SCALE_EPS);
        distances
            .iter()
            .map(|d| (-(d * d) / (2.0 * sigma * sigma)).exp().clamp(0.0, 1.0))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name", deny_unknown_fields)]
pub enum AlertRuleConfig {
    Uniform,
    TrustGauss {
        #[serde(default = "default_scale_factor")]
        scale_factor: f64,
    },
}

fn default_scale_factor() -> f64 {
    TrustGaussRule::default().scale_factor
}

impl Default for AlertRuleConfig {
    fn default() -> Self {
        AlertRuleConfig::TrustGauss { scale_factor: default_scale_factor() }
    }
}

impl AlertRuleConfig {
    pub fn build(&self) -> Result<Box<dyn AlertRule>> {
        match *self {
            AlertRuleConfig::Uniform => Ok(Box::new(UniformRule)),
            AlertRuleConfig::TrustGauss { scale_factor } => {
                if !(scale_factor > 0.0 && scale_factor.is_finite()) {
                    return Err(Error::config(format!("trust_gauss scale_factor must be > 0, got {scale_factor}")));
                }
                Ok(Box::new(TrustGaussRule { scale_factor }))
            }
        }
    }
}

/// Look a rule up by its registered name with default parameters.
pub fn rule_by_name(name: &str) -> Result<Box<dyn AlertRule>> {
    match name {
        "uniform" => Ok(Box::new(UniformRule)),
        "trust_gauss" => Ok(Box::new(TrustGaussRule::default())),
        other => Err(Error::config(format!("unknown alert rule `{other}` (known: uniform, trust_gauss)"))),
    }
}

/// Aggregate `own` with the (already ban-filtered) `received` updates and
/// emit one alert per received update.
pub fn trust_weighted_aggregate(
    rule: &dyn AlertRule,
    rater: NodeId,
    own: &ParamVector,
    received: &BTreeMap<NodeId, &ParamVector>,
    round: u32,
) -> Result<AggregationOutcome> {
    let dim = own.dim();
    if let Some(u) = received.values().find(|u| u.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, actual: u.dim() });
    }
    if received.is_empty() {
        return Ok(AggregationOutcome { new_params: own.clone(), alerts: Vec::new() });
    }
    let updates: Vec<&ParamVector> = received.values().copied().collect();
    let weights = rule.weigh(own, &updates);
    let total = 1.0 + weights.iter().sum::<f64>();
    let mut acc = own.0.clone();
    for (u, &w) in updates.iter().zip(&weights) {
        if w > 0.0 {
            acc.iter_mut().zip(&u.0).for_each(|(a, v)| *a += w * v);
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    let alerts = received
        .keys()
        .zip(&weights)
        .map(|(&rated, &weight)| AlertRecord { rater, rated, round, weight: weight.clamp(0.0, 1.0) })
        .collect();
    Ok(AggregationOutcome { new_params: ParamVector(acc), alerts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use rand_distr::{Distribution, StandardNormal};

    fn map(vs: &[ParamVector]) -> BTreeMap<NodeId, &ParamVector> {
        vs.iter().enumerate().map(|(k, v)| (NodeId(k as u32 + 1), v)).collect()
    }

    fn benign_fixture(seed: u64, k: usize, dim: usize) -> (ParamVector, Vec<ParamVector>) {
        let mut rng = rng::rng_for(seed, Stream::Init, 99, 0);
        let base: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut draw = || {
            ParamVector(base.iter().map(|b| b + 0.05 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
        };
        let own = draw();
        let received = (0..k).map(|_| draw()).collect();
        (own, received)
    }

    #[test]
    fn ban_filter_examples() {
        let vs = vec![ParamVector(vec![1.0]), ParamVector(vec![2.0]), ParamVector(vec![3.0])];
        let received = map(&vs);
        assert_eq!(apply_ban_filter(&received, &BanList::default()), received);
        let all = BanList { banned: received.keys().copied().collect(), as_of_round: 1 };
        assert!(apply_ban_filter(&received, &all).is_empty());
        let b = BanList { banned: [NodeId(2)].into(), as_of_round: 1 };
        let kept: Vec<NodeId> = apply_ban_filter(&received, &b).into_keys().collect();
        assert_eq!(kept, vec![NodeId(1), NodeId(3)]);
    }

    #[test]
    fn consensus_gives_full_trust() {
        let own = ParamVector(vec![0.3, -1.0, 2.0]);
        let vs = vec![own.clone(); 4];
        let out = trust_weighted_aggregate(&TrustGaussRule::default(), NodeId(0), &own, &map(&vs), 3).unwrap();
        assert_eq!(out.new_params, own);
        assert!(out.alerts.iter().all(|a| a.weight == 1.0 && a.round == 3 && a.rater == NodeId(0)));
    }

    #[test]
    fn empty_neighborhood_keeps_own_model() {
        let own = ParamVector(vec![1.0, 2.0]);
        let out = trust_weighted_aggregate(&TrustGaussRule::default(), NodeId(0), &own, &BTreeMap::new(), 1).unwrap();
        assert_eq!(out.new_params, own);
        assert!(out.alerts.is_empty());
    }

    #[test]
    fn far_outlier_gets_lowest_weight() {
        let (own, mut received) = benign_fixture(4, 7, 68);
        let spread = received[0].distance(&own);
        let outlier = ParamVector(own.0.iter().map(|v| v + 10.0 * spread).collect());
        received.push(outlier);
        let w = TrustGaussRule::default().weigh(&own, &received.iter().collect::<Vec<_>>());
        let last = *w.last().unwrap();
        assert!(last < 0.5);
        assert!(w[..7].iter().all(|&x| x > last));
    }

    #[test]
    fn aggregate_stays_in_coordinate_hull() {
        let (own, received) = benign_fixture(8, 6, 10);
        let out = trust_weighted_aggregate(&TrustGaussRule::default(), NodeId(0), &own, &map(&received), 1).unwrap();
        for k in 0..own.dim() {
            let vals = std::iter::once(own.0[k]).chain(received.iter().map(|v| v.0[k]));
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            assert!(out.new_params.0[k] >= lo - 1e-12 && out.new_params.0[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn uniform_rule_is_the_plain_mean() {
        let own = ParamVector(vec![0.0, 3.0]);
        let vs = vec![ParamVector(vec![2.0, 0.0]), ParamVector(vec![4.0, 0.0])];
        let rule = rule_by_name("uniform").unwrap();
        let out = trust_weighted_aggregate(rule.as_ref(), NodeId(0), &own, &map(&vs), 1).unwrap();
        assert_eq!(out.new_params.0, vec![2.0, 1.0]);
        assert!(out.alerts.iter().all(|a| a.weight == 1.0));
    }

    #[test]
    fn unknown_rule_name_is_a_config_error() {
        assert!(matches!(rule_by_name("wfagg"), Err(Error::Config(_))));
        assert_eq!(rule_by_name("trust_gauss").unwrap().name(), "trust_gauss");
    }

    #[test]
    fn trust_gauss_trusts_benign_neighborhoods() {
        for seed in 0..20 {
            let (own, received) = benign_fixture(seed, 8, 68);
            let w = TrustGaussRule::default().weigh(&own, &received.iter().collect::<Vec<_>>());
            assert!(w.iter().all(|&x| x > 0.8), "seed {seed}: {w:?}");
        }
    }

    #[test]
    fn sign_flipped_neighbor_is_least_trusted() {
        for seed in 0..20 {
            let (own, mut received) = benign_fixture(seed, 7, 68);
            received[3] = crate::adversary::sign_flip(&received[3]);
            let w = TrustGaussRule::default().weigh(&own, &received.iter().collect::<Vec<_>>());
            let min = w.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(w[3], min);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let own = ParamVector(vec![0.0, 1.0]);
        let vs = vec![ParamVector(vec![1.0])];
        assert!(trust_weighted_aggregate(&UniformRule, NodeId(0), &own, &map(&vs), 1).is_err());
    }
}
