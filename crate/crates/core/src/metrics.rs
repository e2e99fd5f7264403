//! Detection metrics over per-round, per-node decisions.
//!
//! A round's decisions map every *scored* node to whether it was flagged.
//! Nodes that could not be scored that round are simply absent.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::topology::NodeId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    /// Counts for one round's decisions.
    pub fn of_round(decisions: &BTreeMap<NodeId, bool>, truth: &BTreeSet<NodeId>) -> Self {
        let mut c = Self::default();
        for (j, &flag) in decisions {
            match (truth.contains(j), flag) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

/// `2tp / (2tp + fp + fn)`, or 0 when nothing was positive.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

pub fn detection_accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::EmptyInput("accuracy of an empty confusion matrix")),
        total => Ok((c.tp + c.tn) as f64 / total as f64),
    }
}

pub fn false_ban_rate(c: &ConfusionCounts) -> Result<f64> {
    match c.fp + c.tn {
        0 => Err(Error::EmptyInput("false-ban rate without benign nodes")),
        benign => Ok(c.fp as f64 / benign as f64),
    }
}

/// A single confusion matrix over every (node, round) decision.
pub fn global_confusion(decisions: &[BTreeMap<NodeId, bool>], truth: &BTreeSet<NodeId>) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for round in decisions {
        c.add(&ConfusionCounts::of_round(round, truth));
    }
    c
}

/// Mean over rounds of that round's false-ban rate. Rounds with no scored
/// benign node are left out; with none at all the result is 0.
pub fn per_round_fbr_average(decisions: &[BTreeMap<NodeId, bool>], truth: &BTreeSet<NodeId>) -> f64 {
    let rates: Vec<f64> = decisions
        .iter()
        .filter_map(|r| false_ban_rate(&ConfusionCounts::of_round(r, truth)).ok())
        .collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}
