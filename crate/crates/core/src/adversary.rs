//! Byzantine model-poisoning attacks and malicious-node placement.
//!
//! Malicious nodes run the normal workflow; only the vector they *share*
//! is replaced by one of these transformations.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::learning::ParamVector;
use crate::rng::{self, Stream};
use crate::topology::{MultiDomainGraph, NodeId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackKind {
    Noise {
        #[serde(default = "default_noise_param")]
        mu: f64,
        #[serde(default = "default_noise_param")]
        sigma2: f64,
    },
    SignFlip,
    Ipm {
        #[serde(default = "default_ipm_epsilon")]
        epsilon: f64,
    },
}

fn default_noise_param() -> f64 {
    0.1
}

fn default_ipm_epsilon() -> f64 {
    100.0
}

impl AttackKind {
    pub fn noise() -> Self {
        AttackKind::Noise { mu: 0.1, sigma2: 0.1 }
    }

    pub fn ipm() -> Self {
        AttackKind::Ipm { epsilon: 100.0 }
    }

    pub fn label(&self) -> String {
        match self {
            AttackKind::Noise { .. } => "Noise".into(),
            AttackKind::SignFlip => "Sign-Flipping".into(),
            AttackKind::Ipm { epsilon } => format!("IPM-{epsilon}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackKind::Noise { mu, sigma2 } if !(sigma2 >= 0.0 && sigma2.is_finite() && mu.is_finite()) => {
                Err(Error::config(format!("noise attack needs finite mu and sigma2 >= 0, got ({mu}, {sigma2})")))
            }
            AttackKind::Ipm { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => {
                Err(Error::config(format!("IPM epsilon must be > 0, got {epsilon}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub malicious: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementPolicy {
    Random,
    Distributed,
    InterDomainAttacks,
    NoInterDomainAttacks,
}

impl PlacementPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            PlacementPolicy::Random => "Random",
            PlacementPolicy::Distributed => "Distributed",
            PlacementPolicy::InterDomainAttacks => "Inter-domain attacks",
            PlacementPolicy::NoInterDomainAttacks => "No inter-domain attacks",
        }
    }
}

fn sample<R: rand::Rng>(pool: &[NodeId], m: usize, rng: &mut R, policy: PlacementPolicy) -> Result<BTreeSet<NodeId>> {
    if pool.len() < m {
        return Err(Error::config(format!(
            "placement policy `{}` needs {m} eligible nodes but only {} qualify",
            policy.label(),
            pool.len()
        )));
    }
    Ok(pool.choose_multiple(rng, m).copied().collect())
}

/// Choose `m` malicious nodes according to `policy`.
pub fn place_malicious(g: &MultiDomainGraph, m: usize, policy: PlacementPolicy, seed: u64) -> Result<BTreeSet<NodeId>> {
    let n = g.n_nodes();
    if m >= n {
        return Err(Error::config(format!("malicious count {m} must be below the node count {n}")));
    }
    if m == 0 {
        return Ok(BTreeSet::new());
    }
    let mut rng = rng::rng_for(seed, Stream::Placement, m as u64, 0);
    let all: Vec<NodeId> = g.nodes().collect();
    match policy {
        PlacementPolicy::Random => sample(&all, m, &mut rng, policy),
        PlacementPolicy::Distributed => {
            // Round-robin over domains, one random member at a time.
            let mut pools: Vec<Vec<NodeId>> = (0..g.n_domains())
                .map(|d| {
                    let mut members = g.members(crate::DomainId(d as u32));
                    members.shuffle(&mut rng);
                    members
                })
                .collect();
            let mut chosen = BTreeSet::new();
            let mut d = 0;
            while chosen.len() < m {
                if let Some(i) = pools[d].pop() {
                    chosen.insert(i);
                }
                d = (d + 1) % pools.len();
            }
            Ok(chosen)
        }
        PlacementPolicy::InterDomainAttacks => {
            let pool: Vec<NodeId> = all.into_iter().filter(|&i| g.inter_domain_degree(i) > 0).collect();
            sample(&pool, m, &mut rng, policy)
        }
        PlacementPolicy::NoInterDomainAttacks => {
            let pool: Vec<NodeId> = all.into_iter().filter(|&i| g.inter_domain_degree(i) == 0).collect();
            sample(&pool, m, &mut rng, policy)
        }
    }
}

/// Add an independent `Normal(mu, sigma2)` draw to every coordinate.
pub fn noise_attack(u: &ParamVector, mu: f64, sigma2: f64, seed: u64) -> ParamVector {
    if sigma2 == 0.0 {
        return ParamVector(u.0.iter().map(|v| v + mu).collect());
    }
    let normal = Normal::new(mu, sigma2.sqrt()).expect("validated variance");
    let mut rng = rng::rng_for(seed, Stream::Noise, 0, 0);
    ParamVector(u.0.iter().map(|v| v + normal.sample(&mut rng)).collect())
}

pub fn sign_flip(u: &ParamVector) -> ParamVector {
    ParamVector(u.0.iter().map(|v| -v).collect())
}

/// Inner product manipulation: `-epsilon` times the mean honest vector.
pub fn ipm_attack(honest: &[&ParamVector], epsilon: f64) -> Result<ParamVector> {
    let first = honest
        .first()
        .ok_or(Error::EmptyInput("IPM needs at least one honest update"))?;
    let dim = first.dim();
    let mut mean = vec![0.0; dim];
    for u in honest {
        if u.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: u.dim() });
        }
        mean.iter_mut().zip(&u.0).for_each(|(m, v)| *m += v);
    }
    let scale = -epsilon / honest.len() as f64;
    Ok(ParamVector(mean.into_iter().map(|m| m * scale).collect()))
}
