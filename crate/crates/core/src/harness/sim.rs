//! The synchronous round loop.
//!
//! Every round runs, in order: local training on every node, attack
//! transformation of the malicious nodes' shared vectors, sharing over
//! ban-filtered edges, per-node trust-weighted aggregation with alert
//! emission, domain ingestion / relay / detection / ban decision, and
//! finally metrics and accounting.

use std::collections::{BTreeMap, BTreeSet};

use crate::adversary::{ipm_attack, noise_attack, place_malicious, sign_flip, AttackKind};
use crate::aggregation::{trust_weighted_aggregate, AlertRecord, AlertRule, BanList};
use crate::detectors::{AnyDetector, DetectionOutcome, Detector};
use crate::learning::{evaluate, generate_synthetic_task, local_train, Model, NodeDataset, ParamVector};
use crate::metrics::{self, ConfusionCounts};
use crate::rng::{self, Stream};
use crate::sdn::{self, BanDecision, CoordinationBatch, DomainApp, TrafficStats, ALERT_MESSAGE_BYTES};
use crate::topology::{DomainId, MultiDomainGraph, NodeId};
use crate::{Error, Result};

use super::config::{IpmKnowledge, MitigationScheme, ScenarioConfig};
use super::report::{
    mean_std, overhead_summary, AccuracySnapshot, DetectionSummary, GraphSummary, RoundReport, RunReport,
};
use super::timing::Timer;

/// What the domain applications do with the assembled alert vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectMode {
    /// As the mitigation scheme dictates.
    Normal,
    /// Feed every vector to the detector in train-only mode; no decisions.
    TrainOnly,
    /// Collect and relay alerts without touching the detector.
    RecordOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Fan node work and domain detection out to worker threads. Results
    /// are identical either way.
    pub parallel: bool,
    /// Keep every coordination batch for the coordination log.
    pub keep_coordination: bool,
    /// Keep every round's assembled alert vectors.
    pub record_alerts: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { parallel: cfg!(feature = "parallel"), keep_coordination: false, record_alerts: false }
    }
}

fn par_map<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

fn par_map_mut<A, T, F>(items: &mut [A], parallel: bool, f: F) -> Vec<T>
where
    A: Send,
    T: Send,
    F: Fn(usize, &mut A) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return items.par_iter_mut().enumerate().map(|(k, a)| f(k, a)).collect();
    }
    let _ = parallel;
    items.iter_mut().enumerate().map(|(k, a)| f(k, a)).collect()
}

fn non_finite(round: u32, node: usize, what: impl Into<String>) -> Error {
    Error::NonFinite { round, node: NodeId(node as u32), what: what.into() }
}

/// Revocable-ban aggregation: every neighbor is rated, only unbanned
/// neighbors are mixed in.
fn shadow_aggregate(
    rule: &dyn AlertRule,
    rater: NodeId,
    own: &ParamVector,
    all: &BTreeMap<NodeId, &ParamVector>,
    bans: &BanList,
    round: u32,
) -> Result<(ParamVector, Vec<AlertRecord>)> {
    if let Some(u) = all.values().find(|u| u.dim() != own.dim()) {
        return Err(Error::DimensionMismatch { expected: own.dim(), actual: u.dim() });
    }
    let updates: Vec<&ParamVector> = all.values().copied().collect();
    let weights = rule.weigh(own, &updates);
    let mut acc = own.0.clone();
    let mut total = 1.0;
    for ((j, u), &w) in all.iter().zip(&weights) {
        if !bans.contains(*j) && w > 0.0 {
            acc.iter_mut().zip(&u.0).for_each(|(a, v)| *a += w * v);
            total += w;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    let alerts = all
        .keys()
        .zip(&weights)
        .map(|(&rated, &w)| AlertRecord { rater, rated, round, weight: w.clamp(0.0, 1.0) })
        .collect();
    Ok((ParamVector(acc), alerts))
}

pub struct Simulation {
    cfg: ScenarioConfig,
    graph: MultiDomainGraph,
    malicious: BTreeSet<NodeId>,
    datasets: Vec<NodeDataset>,
    params: Vec<ParamVector>,
    rule: Box<dyn AlertRule>,
    apps: Vec<DomainApp>,
    round: u32,
    options: SimOptions,
    mode: DetectMode,
    decisions: Vec<BTreeMap<NodeId, bool>>,
    reports: Vec<RoundReport>,
    coordination: Vec<CoordinationBatch>,
    recorded: Vec<Vec<BTreeMap<NodeId, Vec<f64>>>>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = cfg.graph.build(cfg.seed)?;
        let malicious = place_malicious(&graph, cfg.malicious, cfg.placement, cfg.seed)?;
        let datasets = generate_synthetic_task(graph.n_nodes(), &cfg.task, cfg.seed)?;
        let model = Model::for_task(&cfg.task, &cfg.learner);
        let init = model.init(rng::derive(cfg.seed, Stream::Init, 0, 0));
        let params = vec![init; graph.n_nodes()];
        let rule = cfg.alert_rule.build()?;
        let apps = (0..graph.n_domains())
            .map(|d| {
                let det = cfg.detector.build(rng::derive(cfg.seed, Stream::Detector, d as u64, 0))?;
                DomainApp::new(&graph, DomainId(d as u32), det)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            graph,
            malicious,
            datasets,
            params,
            rule,
            apps,
            round: 0,
            options: SimOptions::default(),
            mode: DetectMode::Normal,
            decisions: Vec::new(),
            reports: Vec::new(),
            coordination: Vec::new(),
            recorded: Vec::new(),
        })
    }

    pub fn with_options(mut self, options: SimOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_mode(mut self, mode: DetectMode) -> Self {
        self.mode = mode;
        self
    }

    /// Give every domain its own copy of `detector`, with per-node memory
    /// cleared.
    pub fn with_detector(mut self, detector: &AnyDetector) -> Self {
        for app in &mut self.apps {
            let mut d = detector.clone();
            d.reset_node_state();
            app.detector = d;
        }
        self
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &MultiDomainGraph {
        &self.graph
    }

    pub fn malicious(&self) -> &BTreeSet<NodeId> {
        &self.malicious
    }

    pub fn params(&self) -> &[ParamVector] {
        &self.params
    }

    pub fn apps(&self) -> &[DomainApp] {
        &self.apps
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn reports(&self) -> &[RoundReport] {
        &self.reports
    }

    pub fn decisions(&self) -> &[BTreeMap<NodeId, bool>] {
        &self.decisions
    }

    pub fn coordination(&self) -> &[CoordinationBatch] {
        &self.coordination
    }

    /// Assembled alert vectors, indexed `[round - 1][domain]`.
    pub fn recorded(&self) -> &[Vec<BTreeMap<NodeId, Vec<f64>>>] {
        &self.recorded
    }

    pub fn into_recorded(self) -> Vec<Vec<BTreeMap<NodeId, Vec<f64>>>> {
        self.recorded
    }

    fn home(&self, j: NodeId) -> usize {
        self.graph.domain_assignment()[j.index()].index()
    }

    /// Nodes currently banned by their own home domain.
    pub fn banned(&self) -> BTreeSet<NodeId> {
        self.apps.iter().flat_map(|a| a.own_bans()).collect()
    }

    fn records_decisions(&self) -> bool {
        self.mode == DetectMode::Normal && self.cfg.mitigation != MitigationScheme::NoAction
    }

    fn runs_domain_apps(&self) -> bool {
        match self.mode {
            DetectMode::Normal => self.cfg.mitigation.detects(),
            DetectMode::TrainOnly | DetectMode::RecordOnly => true,
        }
    }

    fn train_all(&self, t: u32) -> Result<Vec<ParamVector>> {
        let (params, data, learner, seed) = (&self.params, &self.datasets, &self.cfg.learner, self.cfg.seed);
        par_map(params.len(), self.options.parallel, |i| {
            let s = rng::derive(seed, Stream::Train, i as u64, t as u64);
            let p = local_train(&params[i], &data[i], learner, s).map_err(|e| non_finite(t, i, e.to_string()))?;
            if p.is_finite() {
                Ok(p)
            } else {
                Err(non_finite(t, i, "local training produced non-finite parameters"))
            }
        })
        .into_iter()
        .collect()
    }

    fn attack(&self, trained: &[ParamVector], t: u32) -> Result<BTreeMap<NodeId, ParamVector>> {
        let benign_refs = |pool: &mut dyn Iterator<Item = NodeId>| -> Vec<&ParamVector> {
            pool.filter(|j| !self.malicious.contains(j)).map(|j| &trained[j.index()]).collect()
        };
        let global_ipm = match self.cfg.attack {
            AttackKind::Ipm { epsilon } if self.cfg.ipm_knowledge == IpmKnowledge::Global && !self.malicious.is_empty() => {
                Some(ipm_attack(&benign_refs(&mut self.graph.nodes()), epsilon)?)
            }
            _ => None,
        };
        let mut out = BTreeMap::new();
        for &i in &self.malicious {
            let own = &trained[i.index()];
            let shared = match self.cfg.attack {
                AttackKind::Noise { mu, sigma2 } => {
                    noise_attack(own, mu, sigma2, rng::derive(self.cfg.seed, Stream::Noise, i.0 as u64, t as u64))
                }
                AttackKind::SignFlip => sign_flip(own),
                AttackKind::Ipm { epsilon } => match &global_ipm {
                    Some(v) => v.clone(),
                    None => {
                        let mut honest = benign_refs(&mut self.graph.neighbors(i)?.iter().copied());
                        if honest.is_empty() {
                            honest.push(own);
                        }
                        ipm_attack(&honest, epsilon)?
                    }
                },
            };
            out.insert(i, shared);
        }
        Ok(out)
    }

    /// Aggregate every node; returns new parameters, all alerts and the
    /// number of model transmissions.
    fn aggregate_all(
        &self,
        trained: &[ParamVector],
        attacked: &BTreeMap<NodeId, ParamVector>,
        t: u32,
    ) -> Result<(Vec<ParamVector>, Vec<AlertRecord>, u64)> {
        let shared = |j: NodeId| attacked.get(&j).unwrap_or(&trained[j.index()]);
        let sticky = self.cfg.sticky_bans;
        let results: Vec<Result<(ParamVector, Vec<AlertRecord>, u64)>> =
            par_map(self.graph.n_nodes(), self.options.parallel, |i| {
                let me = NodeId(i as u32);
                let bans = &self.apps[self.home(me)].ban_view;
                let neighbors = self.graph.neighbors(me)?;
                let (new_params, alerts, transmissions) = if sticky {
                    let received: BTreeMap<NodeId, &ParamVector> =
                        neighbors.iter().filter(|j| !bans.contains(**j)).map(|&j| (j, shared(j))).collect();
                    let n = received.len() as u64;
                    let out = trust_weighted_aggregate(self.rule.as_ref(), me, &trained[i], &received, t)?;
                    (out.new_params, out.alerts, n)
                } else {
                    let all: BTreeMap<NodeId, &ParamVector> = neighbors.iter().map(|&j| (j, shared(j))).collect();
                    let n = neighbors.iter().filter(|j| !bans.contains(**j)).count() as u64;
                    let (p, a) = shadow_aggregate(self.rule.as_ref(), me, &trained[i], &all, bans, t)?;
                    (p, a, n)
                };
                if !new_params.is_finite() {
                    return Err(non_finite(t, i, "aggregation produced non-finite parameters"));
                }
                Ok((new_params, alerts, transmissions))
            });
        let mut params = Vec::with_capacity(results.len());
        let mut alerts = Vec::new();
        let mut transmissions = 0;
        for r in results {
            let (p, a, n) = r?;
            params.push(p);
            alerts.extend(a);
            transmissions += n;
        }
        Ok((params, alerts, transmissions))
    }

    fn accuracy(&self, exclude: &BTreeSet<NodeId>) -> Result<(f64, f64)> {
        let nodes: Vec<usize> = self
            .graph
            .nodes()
            .filter(|j| !self.malicious.contains(j) && !exclude.contains(j))
            .map(NodeId::index)
            .collect();
        let accs: Vec<f64> = par_map(nodes.len(), self.options.parallel, |k| {
            evaluate(&self.params[nodes[k]], &self.datasets[nodes[k]], &self.cfg.learner)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        Ok(mean_std(&accs))
    }

    /// Run one round.
    pub fn step(&mut self) -> Result<RoundReport> {
        let t = self.round + 1;
        let mut report = RoundReport { round: t, ..Default::default() };
        let mut new_bans: BTreeSet<NodeId> = BTreeSet::new();

        if self.mode == DetectMode::Normal
            && self.cfg.mitigation == MitigationScheme::Oracle
            && t >= self.cfg.mitigation_start
        {
            for app in &mut self.apps {
                for &j in &self.malicious {
                    if app.ban_view.banned.insert(j) && app.members.contains(&j) {
                        new_bans.insert(j);
                    }
                }
                app.ban_view.as_of_round = app.ban_view.as_of_round.max(t);
            }
        }
        let banned_before = self.banned();

        let timer = Timer::start();
        let trained = self.train_all(t)?;
        let attacked = self.attack(&trained, t)?;
        report.t_train_s = timer.secs();

        let timer = Timer::start();
        let (new_params, alerts, transmissions) = self.aggregate_all(&trained, &attacked, t)?;
        self.params = new_params;
        report.t_agg_s = timer.secs();
        report.bytes_model = transmissions * sdn::model_update_bytes(self.params[0].dim());

        let mut rated_count = vec![0usize; self.graph.n_nodes()];
        alerts.iter().for_each(|a| rated_count[a.rated.index()] += 1);

        let mut anomalous: BTreeSet<NodeId> = BTreeSet::new();
        let mut lifted: BTreeSet<NodeId> = BTreeSet::new();
        if self.runs_domain_apps() {
            let timer = Timer::start();
            report.bytes_alerts = alerts.len() as u64 * ALERT_MESSAGE_BYTES;
            let mut by_domain: Vec<Vec<AlertRecord>> = vec![Vec::new(); self.apps.len()];
            for a in alerts {
                by_domain[self.home(a.rater)].push(a);
            }
            for (app, batch) in self.apps.iter_mut().zip(&by_domain) {
                app.begin_round();
                app.ingest_alerts(&self.graph, batch)?;
            }
            let mut traffic = sdn::exchange_relays(&mut self.apps, t);
            let received: Vec<BTreeMap<NodeId, Vec<f64>>> = self.apps.iter().map(DomainApp::assemble_all).collect();

            let mode = self.mode;
            let bans_active = self.cfg.mitigation == MitigationScheme::Mitigate && t >= self.cfg.mitigation_start;
            let (graph, seed, sticky) = (&self.graph, self.cfg.seed, self.cfg.sticky_bans);
            let outcomes: Vec<Result<(BanDecision, f64)>> = par_map_mut(&mut self.apps, self.options.parallel, |d, app| {
                let timer = Timer::start();
                let recv = &received[d];
                let rng_seed = rng::derive(seed, Stream::DetectorRound, d as u64, t as u64);
                let decision = match mode {
                    DetectMode::RecordOnly => BanDecision::default(),
                    DetectMode::TrainOnly => {
                        app.detector.train_only(recv);
                        BanDecision::default()
                    }
                    DetectMode::Normal if bans_active => app.decide_and_ban(graph, recv, t, rng_seed, sticky)?,
                    DetectMode::Normal => {
                        let outcome: DetectionOutcome = app.detector.detect(recv, rng_seed);
                        BanDecision { outcome, ..Default::default() }
                    }
                };
                Ok((decision, timer.secs()))
            });
            let mut notices = Vec::new();
            for r in outcomes {
                let (decision, secs) = r?;
                report.t_detect_domain_s.push(secs);
                anomalous.extend(decision.outcome.anomalous.iter().copied());
                new_bans.extend(decision.newly_banned.iter().copied());
                lifted.extend(decision.lifted.iter().copied());
                notices.extend(decision.notices);
            }
            sdn::deliver(&mut self.apps, &notices);
            traffic.extend(notices);
            report.bytes_coord = TrafficStats::of(&traffic).bytes;
            if self.options.keep_coordination {
                self.coordination.extend(traffic);
            }
            if self.options.record_alerts {
                self.recorded.push(received);
            }
            report.t_detect_s = timer.secs();
        }

        if self.records_decisions() {
            let sticky = self.cfg.sticky_bans;
            let decisions: BTreeMap<NodeId, bool> = self
                .graph
                .nodes()
                .filter_map(|j| {
                    if sticky && banned_before.contains(&j) {
                        Some((j, true))
                    } else if rated_count[j.index()] > 0 {
                        Some((j, anomalous.contains(&j)))
                    } else {
                        None
                    }
                })
                .collect();
            report.confusion = ConfusionCounts::of_round(&decisions, &self.malicious);
            report.scored = decisions.len() as u64;
            self.decisions.push(decisions);
        }

        let banned_now = self.banned();
        let exclude = if self.cfg.exclude_banned_from_accuracy { banned_now.clone() } else { BTreeSet::new() };
        (report.acc_mean, report.acc_std) = self.accuracy(&exclude)?;
        report.new_bans = new_bans.into_iter().collect();
        report.lifted_bans = lifted.into_iter().collect();
        report.banned_total = banned_now.len();
        self.round = t;
        self.reports.push(report.clone());
        Ok(report)
    }

    /// Run the remaining rounds.
    pub fn run(&mut self) -> Result<()> {
        while self.round < self.cfg.rounds {
            self.step()?;
        }
        Ok(())
    }

    pub fn detection_summary(&self) -> Option<DetectionSummary> {
        if !self.records_decisions() {
            return None;
        }
        let confusion = metrics::global_confusion(&self.decisions, &self.malicious);
        Some(DetectionSummary {
            confusion,
            f1: metrics::f1(&confusion),
            accuracy: metrics::detection_accuracy(&confusion).ok(),
            avg_fbr: metrics::per_round_fbr_average(&self.decisions, &self.malicious),
            global_fbr: metrics::false_ban_rate(&confusion).ok(),
        })
    }

    pub fn report(&self) -> RunReport {
        let snap = |r: &RoundReport| AccuracySnapshot { round: r.round, mean: r.acc_mean, std: r.acc_std };
        let mut notes = vec![
            "accuracy: mean and population std over benign nodes".to_string(),
            "confusion: nodes that received no alerts in a round are not scored that round".to_string(),
        ];
        if self.cfg.sticky_bans {
            notes.push("confusion: a banned node counts as flagged in every later round".into());
        }
        if self.cfg.exclude_banned_from_accuracy {
            notes.push("accuracy: banned benign nodes excluded".into());
        }
        RunReport {
            config: self.cfg.clone(),
            malicious: self.malicious.iter().copied().collect(),
            graph: GraphSummary::of(&self.graph),
            rounds: self.reports.clone(),
            detection: self.detection_summary(),
            snapshots: self.reports.iter().filter(|r| r.round == 10 || r.round == 20).map(snap).collect(),
            final_accuracy: self.reports.last().map(snap).unwrap_or_default(),
            overhead: overhead_summary(&self.reports),
            notes,
        }
    }
}
