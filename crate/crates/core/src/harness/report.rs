//! Per-round and per-run reports, overhead summaries and output files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::ConfusionCounts;
use crate::topology::{MultiDomainGraph, NodeId};
use crate::Result;

use super::config::ScenarioConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub confusion: ConfusionCounts,
    /// Nodes that were banned before this round or received alerts.
    pub scored: u64,
    pub new_bans: Vec<NodeId>,
    pub lifted_bans: Vec<NodeId>,
    pub banned_total: usize,
    pub t_train_s: f64,
    pub t_agg_s: f64,
    pub t_detect_s: f64,
    /// Detection time of each domain application.
    pub t_detect_domain_s: Vec<f64>,
    pub bytes_model: u64,
    pub bytes_alerts: u64,
    pub bytes_coord: u64,
}

impl RoundReport {
    fn strip_timings(&mut self) {
        self.t_train_s = 0.0;
        self.t_agg_s = 0.0;
        self.t_detect_s = 0.0;
        self.t_detect_domain_s.iter_mut().for_each(|t| *t = 0.0);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracySnapshot {
    pub round: u32,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub confusion: ConfusionCounts,
    pub f1: f64,
    /// `None` when nothing was ever scored.
    pub accuracy: Option<f64>,
    /// Mean over rounds of the per-round false-ban rate.
    pub avg_fbr: f64,
    /// False-ban rate of the global confusion matrix.
    pub global_fbr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub domains: usize,
    pub domain_sizes: Vec<usize>,
    pub edges: usize,
    pub intra_edges: usize,
    pub inter_edges: usize,
    pub mean_degree: f64,
}

impl GraphSummary {
    pub fn of(g: &MultiDomainGraph) -> Self {
        let (intra_edges, inter_edges) = g.edge_classes();
        Self {
            nodes: g.n_nodes(),
            domains: g.n_domains(),
            domain_sizes: g.domain_sizes(),
            edges: g.n_edges(),
            intra_edges,
            inter_edges,
            mean_degree: g.mean_degree(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverheadSummary {
    pub rounds: usize,
    pub mean_t_detect_s: f64,
    pub mean_t_detect_domain_s: f64,
    pub max_t_detect_domain_s: f64,
    pub mean_t_train_agg_s: f64,
    pub mean_bytes_model: f64,
    pub mean_bytes_alerts: f64,
    pub mean_bytes_coord: f64,
    /// Detection time over total round time.
    pub time_ratio: f64,
    /// Alert plus coordination bytes over model bytes.
    pub bytes_ratio: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

pub fn overhead_summary(rounds: &[RoundReport]) -> OverheadSummary {
    if rounds.is_empty() {
        return OverheadSummary::default();
    }
    let n = rounds.len() as f64;
    let mean = |f: &dyn Fn(&RoundReport) -> f64| rounds.iter().map(f).sum::<f64>() / n;
    let domain_times: Vec<f64> = rounds.iter().flat_map(|r| r.t_detect_domain_s.iter().copied()).collect();
    let mean_t_detect_s = mean(&|r| r.t_detect_s);
    let mean_t_train_agg_s = mean(&|r| r.t_train_s + r.t_agg_s);
    let mean_bytes_model = mean(&|r| r.bytes_model as f64);
    let mean_bytes_alerts = mean(&|r| r.bytes_alerts as f64);
    let mean_bytes_coord = mean(&|r| r.bytes_coord as f64);
    OverheadSummary {
        rounds: rounds.len(),
        mean_t_detect_s,
        mean_t_detect_domain_s: if domain_times.is_empty() {
            0.0
        } else {
            domain_times.iter().sum::<f64>() / domain_times.len() as f64
        },
        max_t_detect_domain_s: domain_times.iter().copied().fold(0.0, f64::max),
        mean_t_train_agg_s,
        mean_bytes_model,
        mean_bytes_alerts,
        mean_bytes_coord,
        time_ratio: ratio(mean_t_detect_s, mean_t_detect_s + mean_t_train_agg_s),
        bytes_ratio: ratio(mean_bytes_alerts + mean_bytes_coord, mean_bytes_model),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub malicious: Vec<NodeId>,
    pub graph: GraphSummary,
    pub rounds: Vec<RoundReport>,
    /// Absent for schemes that make no decisions (NoAction).
    pub detection: Option<DetectionSummary>,
    /// Accuracy at rounds 10 and 20 when the run reaches them.
    pub snapshots: Vec<AccuracySnapshot>,
    pub final_accuracy: AccuracySnapshot,
    pub overhead: OverheadSummary,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn snapshot(&self, round: u32) -> Option<AccuracySnapshot> {
        self.snapshots.iter().find(|s| s.round == round).copied()
    }

    /// Copy with every timing field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.rounds.iter_mut().for_each(RoundReport::strip_timings);
        r.overhead = overhead_summary(&r.rounds);
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("rounds.csv"))?);
        write_rounds_csv(&mut csv, &self.rounds)?;
        csv.flush()?;
        std::fs::write(dir.join("run.json"), self.to_json()?)?;
        Ok(())
    }
}

pub const ROUNDS_CSV_HEADER: &str =
    "round,acc_mean,acc_std,tp,fp,tn,fn,bans,t_train_s,t_agg_s,t_detect_s,bytes_model,bytes_alerts,bytes_coord";

/// One row per round; `bans` is the number of new bans that round.
pub fn write_rounds_csv<W: Write>(mut w: W, rounds: &[RoundReport]) -> Result<()> {
    writeln!(w, "{ROUNDS_CSV_HEADER}")?;
    for r in rounds {
        let c = &r.confusion;
        writeln!(
            w,
            "{},{:.6},{:.6},{},{},{},{},{},{:.6},{:.6},{:.6},{},{},{}",
            r.round,
            r.acc_mean,
            r.acc_std,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            r.new_bans.len(),
            r.t_train_s,
            r.t_agg_s,
            r.t_detect_s,
            r.bytes_model,
            r.bytes_alerts,
            r.bytes_coord
        )?;
    }
    Ok(())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_row_shape() {
        let mut buf = Vec::new();
        let r = RoundReport { round: 3, new_bans: vec![NodeId(1), NodeId(4)], ..Default::default() };
        write_rounds_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 14);
        assert_eq!(lines[1].split(',').count(), 14);
        assert!(lines[1].starts_with("3,"));
        assert_eq!(lines[1].split(',').nth(7), Some("2"));
    }

    #[test]
    fn overhead_ratios() {
        let r = RoundReport {
            t_train_s: 0.3,
            t_agg_s: 0.1,
            t_detect_s: 0.1,
            bytes_model: 1000,
            bytes_alerts: 20,
            bytes_coord: 12,
            t_detect_domain_s: vec![0.04, 0.06],
            ..Default::default()
        };
        let s = overhead_summary(&[r.clone(), r]);
        assert!((s.time_ratio - 0.2).abs() < 1e-12);
        assert!((s.bytes_ratio - 0.032).abs() < 1e-12);
        assert!((s.mean_t_detect_domain_s - 0.05).abs() < 1e-12);
        assert_eq!(s.max_t_detect_domain_s, 0.06);
    }

    #[test]
    fn empty_overhead_is_zero() {
        assert_eq!(overhead_summary(&[]), OverheadSummary::default());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[2.0, 4.0]), (3.0, 1.0));
    }
}
