//! Per-domain detection applications and the inter-domain coordination
//! channel.
//!
//! Each [`DomainApp`] sees only the alerts emitted by its own nodes plus the
//! alerts other domains relay to it about its own nodes. Alerts about a
//! foreign node are queued and shipped to that node's home domain in a
//! [`CoordinationBatch`]; ban decisions travel the same way.
//!
//! Cost model: an alert message is 20 bytes (two 4-byte ids, a 4-byte round,
//! an 8-byte weight), a ban notice 12 bytes, and one model transmission
//! `8 * dim` bytes per directed edge.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregation::{AlertRecord, BanList};
use crate::detectors::{AnyDetector, DetectionOutcome, Detector};
use crate::topology::{DomainId, MultiDomainGraph, NodeId};
use crate::{Error, Result};

pub const ALERT_MESSAGE_BYTES: u64 = 20;
pub const BAN_NOTICE_BYTES: u64 = 12;

pub fn model_update_bytes(dim: usize) -> u64 {
    8 * dim as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertMessage {
    pub rater: NodeId,
    pub rated: NodeId,
    pub round: u32,
    pub weight: f64,
    pub origin_domain: DomainId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BanNotice {
    pub node: NodeId,
    pub round: u32,
    /// True when a previous ban is withdrawn (revocable mode only).
    pub lifted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CoordinationMessage {
    Alert(AlertMessage),
    Ban(BanNotice),
}

impl CoordinationMessage {
    pub fn bytes(&self) -> u64 {
        match self {
            CoordinationMessage::Alert(_) => ALERT_MESSAGE_BYTES,
            CoordinationMessage::Ban(_) => BAN_NOTICE_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationBatch {
    pub from: DomainId,
    pub to: DomainId,
    pub round: u32,
    pub messages: Vec<CoordinationMessage>,
}

impl CoordinationBatch {
    pub fn bytes(&self) -> u64 {
        self.messages.iter().map(CoordinationMessage::bytes).sum()
    }

    /// One flat record per message, as written to the coordination log.
    pub fn records(&self) -> Vec<CoordinationRecord> {
        self.messages
            .iter()
            .map(|m| {
                let (kind, rater, rated, weight) = match *m {
                    CoordinationMessage::Alert(a) => ("alert", Some(a.rater), Some(a.rated), Some(a.weight)),
                    CoordinationMessage::Ban(b) => (if b.lifted { "unban" } else { "ban" }, None, Some(b.node), None),
                };
                CoordinationRecord {
                    round: self.round,
                    from: self.from,
                    to: self.to,
                    kind: kind.into(),
                    rater,
                    rated,
                    weight,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationRecord {
    pub round: u32,
    pub from: DomainId,
    pub to: DomainId,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rater: Option<NodeId>,
    /// Rated node for alerts, the affected node for ban notices.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rated: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weight: Option<f64>,
}

/// Append newline-delimited JSON records for `batches`.
pub fn write_coordination_log<W: Write>(mut w: W, batches: &[CoordinationBatch]) -> Result<()> {
    for b in batches {
        for rec in b.records() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficStats {
    pub alert_messages: u64,
    pub ban_notices: u64,
    pub bytes: u64,
}

impl TrafficStats {
    pub fn of(batches: &[CoordinationBatch]) -> Self {
        let mut s = Self::default();
        for m in batches.iter().flat_map(|b| &b.messages) {
            match m {
                CoordinationMessage::Alert(_) => s.alert_messages += 1,
                CoordinationMessage::Ban(_) => s.ban_notices += 1,
            }
            s.bytes += m.bytes();
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BanDecision {
    pub outcome: DetectionOutcome,
    pub newly_banned: BTreeSet<NodeId>,
    pub lifted: BTreeSet<NodeId>,
    /// Notices for other domains; the deciding domain applies its own
    /// decision directly.
    pub notices: Vec<CoordinationBatch>,
}

#[derive(Debug, Clone)]
pub struct DomainApp {
    pub domain: DomainId,
    pub members: BTreeSet<NodeId>,
    pub detector: AnyDetector,
    pub inbox_local: Vec<AlertMessage>,
    pub inbox_relayed: Vec<AlertMessage>,
    pub relay_queue: BTreeMap<DomainId, Vec<AlertMessage>>,
    /// Every ban this domain's clients enforce, own decisions and notices
    /// from other domains alike.
    pub ban_view: BanList,
}

impl DomainApp {
    pub fn new(g: &MultiDomainGraph, domain: DomainId, detector: AnyDetector) -> Result<Self> {
        if domain.index() >= g.n_domains() {
            return Err(Error::config(format!("domain {domain} does not exist")));
        }
        Ok(Self {
            domain,
            members: g.members(domain).into_iter().collect(),
            detector,
            inbox_local: Vec::new(),
            inbox_relayed: Vec::new(),
            relay_queue: BTreeMap::new(),
            ban_view: BanList::default(),
        })
    }

    /// Clear the inboxes for a new round.
    pub fn begin_round(&mut self) {
        self.inbox_local.clear();
        self.inbox_relayed.clear();
        self.relay_queue.clear();
    }

    pub fn ingest_alerts(&mut self, g: &MultiDomainGraph, alerts: &[AlertRecord]) -> Result<()> {
        for a in alerts {
            if g.domain_of(a.rater)? != self.domain {
                return Err(Error::Protocol(format!(
                    "domain {} received an alert from foreign rater {}",
                    self.domain, a.rater
                )));
            }
            let msg = AlertMessage {
                rater: a.rater,
                rated: a.rated,
                round: a.round,
                weight: a.weight.clamp(0.0, 1.0),
                origin_domain: self.domain,
            };
            let home = g.domain_of(a.rated)?;
            if home == self.domain {
                self.inbox_local.push(msg);
            } else {
                self.relay_queue.entry(home).or_default().push(msg);
            }
        }
        Ok(())
    }

    /// Alert weights about `j`: local first, then relayed, each by ascending
    /// rater.
    pub fn assemble_received(&self, j: NodeId) -> Result<Vec<f64>> {
        if !self.members.contains(&j) {
            return Err(Error::Protocol(format!("node {j} is not managed by domain {}", self.domain)));
        }
        Ok(self.assemble_all().remove(&j).unwrap_or_default())
    }

    /// Received alert vectors for every member (empty for unrated nodes).
    pub fn assemble_all(&self) -> BTreeMap<NodeId, Vec<f64>> {
        type Rated = Vec<(NodeId, f64)>;
        let mut by_node: BTreeMap<NodeId, (Rated, Rated)> =
            self.members.iter().map(|&j| (j, Default::default())).collect();
        for m in &self.inbox_local {
            if let Some(e) = by_node.get_mut(&m.rated) {
                e.0.push((m.rater, m.weight));
            }
        }
        for m in &self.inbox_relayed {
            if let Some(e) = by_node.get_mut(&m.rated) {
                e.1.push((m.rater, m.weight));
            }
        }
        by_node
            .into_iter()
            .map(|(j, (mut local, mut relayed))| {
                local.sort_by_key(|x| x.0);
                relayed.sort_by_key(|x| x.0);
                (j, local.into_iter().chain(relayed).map(|x| x.1).collect())
            })
            .collect()
    }

    pub fn own_bans(&self) -> BTreeSet<NodeId> {
        self.ban_view.banned.intersection(&self.members).copied().collect()
    }

    /// Run the detector on the assembled vectors and update bans. With
    /// `sticky` bans accumulate; otherwise the domain's own bans are exactly
    /// the nodes flagged this round. Bans are effective from `round + 1`.
    pub fn decide_and_ban(
        &mut self,
        g: &MultiDomainGraph,
        received: &BTreeMap<NodeId, Vec<f64>>,
        round: u32,
        rng_seed: u64,
        sticky: bool,
    ) -> Result<BanDecision> {
        if let Some(j) = received.keys().find(|j| !self.members.contains(j)) {
            return Err(Error::Protocol(format!("node {j} is not managed by domain {}", self.domain)));
        }
        let outcome = self.detector.detect(received, rng_seed);
        self.apply_decision(g, outcome, round, sticky)
    }

    /// Ban bookkeeping for an externally computed outcome (used by the
    /// oracle scheme).
    pub fn apply_decision(
        &mut self,
        g: &MultiDomainGraph,
        outcome: DetectionOutcome,
        round: u32,
        sticky: bool,
    ) -> Result<BanDecision> {
        if let Some(j) = outcome.anomalous.iter().find(|j| !self.members.contains(j)) {
            return Err(Error::Protocol(format!("domain {} flagged foreign node {j}", self.domain)));
        }
        let current = self.own_bans();
        let newly: BTreeSet<NodeId> = outcome.anomalous.difference(&current).copied().collect();
        let lifted: BTreeSet<NodeId> =
            if sticky { BTreeSet::new() } else { current.difference(&outcome.anomalous).copied().collect() };
        let mut per_domain: BTreeMap<DomainId, Vec<CoordinationMessage>> = BTreeMap::new();
        for (&j, is_lift) in newly.iter().map(|j| (j, false)).chain(lifted.iter().map(|j| (j, true))) {
            let targets: BTreeSet<DomainId> =
                g.neighbors(j)?.iter().map(|&n| g.domain_of(n)).collect::<Result<_>>()?;
            for d in targets.into_iter().filter(|&d| d != self.domain) {
                per_domain
                    .entry(d)
                    .or_default()
                    .push(CoordinationMessage::Ban(BanNotice { node: j, round, lifted: is_lift }));
            }
        }
        self.ban_view.banned.extend(newly.iter().copied());
        for j in &lifted {
            self.ban_view.banned.remove(j);
        }
        self.ban_view.as_of_round = round + 1;
        let notices = per_domain
            .into_iter()
            .map(|(to, messages)| CoordinationBatch { from: self.domain, to, round, messages })
            .collect();
        Ok(BanDecision { outcome, newly_banned: newly, lifted, notices })
    }

    fn receive(&mut self, batch: &CoordinationBatch) {
        for m in &batch.messages {
            match *m {
                CoordinationMessage::Alert(a) => self.inbox_relayed.push(a),
                CoordinationMessage::Ban(b) if b.lifted => {
                    self.ban_view.banned.remove(&b.node);
                }
                CoordinationMessage::Ban(b) => {
                    self.ban_view.banned.insert(b.node);
                    self.ban_view.as_of_round = self.ban_view.as_of_round.max(b.round + 1);
                }
            }
        }
    }
}

/// Ship every queued cross-domain alert to its home domain. `apps` must be
/// indexed by domain id. Returns the batches exchanged.
pub fn exchange_relays(apps: &mut [DomainApp], round: u32) -> Vec<CoordinationBatch> {
    let mut batches = Vec::new();
    for app in apps.iter_mut() {
        for (to, msgs) in std::mem::take(&mut app.relay_queue) {
            if !msgs.is_empty() {
                batches.push(CoordinationBatch {
                    from: app.domain,
                    to,
                    round,
                    messages: msgs.into_iter().map(CoordinationMessage::Alert).collect(),
                });
            }
        }
    }
    deliver(apps, &batches);
    batches
}

/// Deliver batches (alerts or ban notices) to their destination domains.
pub fn deliver(apps: &mut [DomainApp], batches: &[CoordinationBatch]) {
    for b in batches {
        apps[b.to.index()].receive(b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{DetectorConfig, SadParams};
    use crate::topology::generate_sbm;

    fn sad() -> AnyDetector {
        DetectorConfig::Sad(SadParams::default()).build(0).unwrap()
    }

    fn apps(g: &MultiDomainGraph) -> Vec<DomainApp> {
        (0..g.n_domains()).map(|d| DomainApp::new(g, DomainId(d as u32), sad()).unwrap()).collect()
    }

    fn alert(rater: u32, rated: u32, weight: f64) -> AlertRecord {
        AlertRecord { rater: NodeId(rater), rated: NodeId(rated), round: 1, weight }
    }

    fn graph(domains: &[u32], edges: &[(u32, u32)]) -> MultiDomainGraph {
        let e: Vec<(NodeId, NodeId)> = edges.iter().map(|&(a, b)| (NodeId(a), NodeId(b))).collect();
        MultiDomainGraph::from_edges(domains.iter().map(|&d| DomainId(d)).collect(), &e).unwrap()
    }

    /// Domains {0,1,2} and {3,4}; edges 0-1, 0-2, 1-3, 2-4.
    fn two_domain() -> MultiDomainGraph {
        graph(&[0, 0, 0, 1, 1], &[(0, 1), (0, 2), (1, 3), (2, 4)])
    }

    #[test]
    fn local_alert_stays_local() {
        let g = two_domain();
        let mut a = apps(&g);
        a[0].ingest_alerts(&g, &[alert(0, 1, 0.9)]).unwrap();
        assert_eq!(a[0].inbox_local.len(), 1);
        assert!(a[0].relay_queue.is_empty());
    }

    #[test]
    fn cross_domain_alert_is_relayed() {
        let g = two_domain();
        let mut a = apps(&g);
        a[0].ingest_alerts(&g, &[alert(1, 3, 0.7)]).unwrap();
        assert_eq!(a[0].relay_queue[&DomainId(1)].len(), 1);
        let batches = exchange_relays(&mut a, 1);
        assert_eq!(batches.len(), 1);
        assert_eq!(a[1].inbox_relayed[0].rater, NodeId(1));
        assert_eq!(a[1].assemble_received(NodeId(3)).unwrap(), vec![0.7]);
        assert_eq!(TrafficStats::of(&batches).bytes, ALERT_MESSAGE_BYTES);
    }

    #[test]
    fn foreign_rater_is_a_protocol_error() {
        let g = two_domain();
        let mut a = apps(&g);
        assert!(matches!(a[0].ingest_alerts(&g, &[alert(3, 1, 0.5)]), Err(Error::Protocol(_))));
        assert!(matches!(a[0].assemble_received(NodeId(4)), Err(Error::Protocol(_))));
    }

    #[test]
    fn single_domain_never_relays() {
        let g = generate_sbm(&[10], 0.6, 0.0, 2).unwrap();
        let mut a = apps(&g);
        let alerts: Vec<AlertRecord> =
            g.edges().into_iter().flat_map(|(i, j)| [alert(i.0, j.0, 1.0), alert(j.0, i.0, 1.0)]).collect();
        a[0].ingest_alerts(&g, &alerts).unwrap();
        assert!(exchange_relays(&mut a, 1).is_empty());
    }

    #[test]
    fn assembled_vector_counts_local_and_relayed_raters() {
        // Node 0 in domain 0 rated by 1, 2, 3 (local) and 4, 5 (domain 1).
        let g = graph(&[0, 0, 0, 0, 1, 1], &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]);
        let mut a = apps(&g);
        a[0].ingest_alerts(&g, &[alert(3, 0, 0.3), alert(1, 0, 0.1), alert(2, 0, 0.2)]).unwrap();
        a[1].ingest_alerts(&g, &[alert(5, 0, 0.5), alert(4, 0, 0.4)]).unwrap();
        exchange_relays(&mut a, 1);
        assert_eq!(a[0].assemble_received(NodeId(0)).unwrap(), vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert!(a[0].assemble_received(NodeId(1)).unwrap().is_empty());
    }

    #[test]
    fn relay_conservation_on_random_two_domain_graph() {
        let g = generate_sbm(&[12, 12], 0.5, 0.2, 7).unwrap();
        let mut a = apps(&g);
        for d in 0..2 {
            let alerts: Vec<AlertRecord> = g
                .members(DomainId(d))
                .into_iter()
                .flat_map(|i| g.neighbors(i).unwrap().iter().map(move |&j| alert(i.0, j.0, 0.9)).collect::<Vec<_>>())
                .collect();
            a[d as usize].ingest_alerts(&g, &alerts).unwrap();
        }
        let queued: usize = a.iter().flat_map(|x| x.relay_queue.values()).map(Vec::len).sum();
        let batches = exchange_relays(&mut a, 1);
        let sent = TrafficStats::of(&batches).alert_messages as usize;
        let received: usize = a.iter().map(|x| x.inbox_relayed.len()).sum();
        let inter = g.edge_classes().1;
        assert_eq!(queued, 2 * inter);
        assert_eq!(sent, queued);
        assert_eq!(received, sent);
        // Every directed edge lands in exactly one assembled vector.
        let total: usize = a.iter().flat_map(|x| x.assemble_all().into_values()).map(|v| v.len()).sum();
        assert_eq!(total, 2 * g.n_edges());
    }

    fn flagged(nodes: &[u32]) -> DetectionOutcome {
        DetectionOutcome { anomalous: nodes.iter().map(|&j| NodeId(j)).collect(), ..Default::default() }
    }

    #[test]
    fn empty_decision_changes_nothing() {
        let g = two_domain();
        let mut a = apps(&g);
        let d = a[0].apply_decision(&g, flagged(&[]), 1, true).unwrap();
        assert!(d.notices.is_empty() && a[0].ban_view.is_empty());
    }

    #[test]
    fn ban_notices_reach_every_neighbor_domain_once() {
        // Node 0 in domain 0 with neighbors in domains 0 and 2.
        let g = graph(&[0, 0, 1, 2], &[(0, 1), (0, 3), (1, 2)]);
        let mut a = apps(&g);
        let d = a[0].apply_decision(&g, flagged(&[0]), 4, true).unwrap();
        assert_eq!(d.notices.len(), 1);
        assert_eq!(d.notices[0].to, DomainId(2));
        deliver(&mut a, &d.notices);
        assert!(a[0].ban_view.contains(NodeId(0)) && a[2].ban_view.contains(NodeId(0)));
        assert!(!a[1].ban_view.contains(NodeId(0)));
        assert_eq!(a[2].ban_view.as_of_round, 5);
        let again = a[0].apply_decision(&g, flagged(&[0]), 5, true).unwrap();
        assert!(again.notices.is_empty() && again.newly_banned.is_empty());
        // Sticky: not flagged any more, still banned.
        a[0].apply_decision(&g, flagged(&[]), 6, true).unwrap();
        assert!(a[0].ban_view.contains(NodeId(0)));
    }

    #[test]
    fn revocable_bans_are_lifted_everywhere() {
        let g = two_domain();
        let mut a = apps(&g);
        let d = a[0].apply_decision(&g, flagged(&[1]), 1, false).unwrap();
        deliver(&mut a, &d.notices);
        assert!(a[1].ban_view.contains(NodeId(1)));
        let d = a[0].apply_decision(&g, flagged(&[]), 2, false).unwrap();
        assert_eq!(d.lifted, [NodeId(1)].into());
        deliver(&mut a, &d.notices);
        assert!(!a[0].ban_view.contains(NodeId(1)) && !a[1].ban_view.contains(NodeId(1)));
    }

    #[test]
    fn flagging_a_foreign_node_is_rejected() {
        let g = two_domain();
        let mut a = apps(&g);
        assert!(a[0].apply_decision(&g, flagged(&[3]), 1, true).is_err());
    }

    #[test]
    fn log_records_are_one_line_per_message() {
        let g = two_domain();
        let mut a = apps(&g);
        a[0].ingest_alerts(&g, &[alert(1, 3, 0.7), alert(2, 4, 0.2)]).unwrap();
        let mut batches = exchange_relays(&mut a, 1);
        batches.extend(a[0].apply_decision(&g, flagged(&[2]), 1, true).unwrap().notices);
        let mut buf = Vec::new();
        write_coordination_log(&mut buf, &batches).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2]["kind"], "ban");
        assert_eq!(lines[2]["rated"], 2);
    }
}
