//! Grid search over the FU-HST structural parameters.
//!
//! Every seed records the Noise and Sign-Flipping preset streams once (in
//! observe mode) plus the benign warm-up stream; every lattice point is
//! then pretrained and replayed on those identical streams.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::detectors::{AnyDetector, DetectorConfig, FuHstParams};
use crate::metrics;
use crate::rng::{self, Stream};
use crate::{Error, Result};

use super::config::ScenarioConfig;
use super::presets::preset;
use super::pretrain::{pretrain_on, pretraining_config, record_stream, replay, RecordedStream};
use super::sim::SimOptions;

fn steps_usize(lo: usize, hi: usize, step: usize) -> Vec<usize> {
    (lo..=hi).step_by(step).collect()
}

fn default_trees() -> Vec<usize> {
    steps_usize(60, 360, 60)
}

fn default_depths() -> Vec<usize> {
    (2..=6).collect()
}

fn default_taus() -> Vec<f64> {
    (0..=8).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

fn default_windows() -> Vec<usize> {
    steps_usize(60, 360, 60)
}

fn default_scenarios() -> Vec<String> {
    vec!["s1".into(), "s3".into()]
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

/// Parameter ranges; any field left out of the TOML takes the full
/// default lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "default_trees")]
    pub trees: Vec<usize>,
    #[serde(default = "default_depths")]
    pub depth: Vec<usize>,
    #[serde(default = "default_taus")]
    pub tau: Vec<f64>,
    #[serde(default = "default_windows")]
    pub window: Vec<usize>,
    /// Preset runs whose F1 is averaged.
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Values for every parameter not swept.
    #[serde(default)]
    pub base: FuHstParams,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            trees: default_trees(),
            depth: default_depths(),
            tau: default_taus(),
            window: default_windows(),
            scenarios: default_scenarios(),
            seeds: default_seeds(),
            base: FuHstParams::default(),
        }
    }
}

impl SweepGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let g: Self = toml::from_str(text).map_err(|e| Error::Parse { what: "sweep grid", detail: e.to_string() })?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty()
            || self.depth.is_empty()
            || self.tau.is_empty()
            || self.window.is_empty()
            || self.scenarios.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::config("sweep: every range must be non-empty"));
        }
        for p in self.points() {
            p.validate()?;
        }
        for s in &self.scenarios {
            preset(s)?;
        }
        Ok(())
    }

    /// Lattice points in row-major order (trees, depth, tau, window).
    pub fn points(&self) -> Vec<FuHstParams> {
        let mut out = Vec::new();
        for &trees in &self.trees {
            for &depth in &self.depth {
                for &tau in &self.tau {
                    for &window in &self.window {
                        out.push(FuHstParams { trees, depth, tau, window, ..self.base });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub trees: usize,
    pub depth: usize,
    pub tau: f64,
    pub window: usize,
    pub seed: u64,
    /// One F1 per scenario, in grid order.
    pub f1: Vec<f64>,
    pub mean_f1: f64,
    pub mean_avg_fbr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: FuHstParams,
    /// Mean over seeds of the per-seed mean F1 at the best point.
    pub best_mean_f1: f64,
    pub scenarios: Vec<String>,
    pub rows: Vec<SweepRow>,
}

struct SeedStreams {
    seed: u64,
    warmup: RecordedStream,
    runs: Vec<RecordedStream>,
}

fn record_seed(grid: &SweepGrid, seed: u64, options: SimOptions) -> Result<SeedStreams> {
    let mut runs = Vec::new();
    let mut base: Option<ScenarioConfig> = None;
    for name in &grid.scenarios {
        let cfg = ScenarioConfig { seed, ..preset(name)? };
        runs.push(record_stream(&cfg, options)?);
        base.get_or_insert(cfg);
    }
    let warmup = record_stream(&pretraining_config(&base.expect("scenarios non-empty")), options)?;
    Ok(SeedStreams { seed, warmup, runs })
}

fn evaluate_point(params: &FuHstParams, s: &SeedStreams) -> Result<SweepRow> {
    let det: AnyDetector =
        DetectorConfig::FuHst(*params).build(rng::derive(s.seed, Stream::Detector, 0, 0))?;
    let det = pretrain_on(det, &s.warmup);
    let mut f1 = Vec::with_capacity(s.runs.len());
    let mut fbr = 0.0;
    for run in &s.runs {
        let decisions = replay(&det, run);
        f1.push(metrics::f1(&metrics::global_confusion(&decisions, &run.malicious)));
        fbr += metrics::per_round_fbr_average(&decisions, &run.malicious);
    }
    let n = f1.len() as f64;
    Ok(SweepRow {
        trees: params.trees,
        depth: params.depth,
        tau: params.tau,
        window: params.window,
        seed: s.seed,
        mean_f1: f1.iter().sum::<f64>() / n,
        mean_avg_fbr: fbr / n,
        f1,
    })
}

/// Evaluate every lattice point on every seed. Rows come out ordered by
/// lattice point, then seed. Ties for the best point keep the earliest.
pub fn grid_search(grid: &SweepGrid, options: SimOptions) -> Result<SweepResult> {
    grid.validate()?;
    let streams = grid.seeds.iter().map(|&s| record_seed(grid, s, options)).collect::<Result<Vec<_>>>()?;
    let points = grid.points();
    let jobs: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|p| (0..streams.len()).map(move |s| (p, s))).collect();
    let eval = |&(p, s): &(usize, usize)| evaluate_point(&points[p], &streams[s]);
    #[cfg(feature = "parallel")]
    let rows: Vec<Result<SweepRow>> = if options.parallel {
        use rayon::prelude::*;
        jobs.par_iter().map(eval).collect()
    } else {
        jobs.iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Result<SweepRow>> = jobs.iter().map(eval).collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let per_point = streams.len();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (p, chunk) in rows.chunks(per_point).enumerate() {
        let score = chunk.iter().map(|r| r.mean_f1).sum::<f64>() / per_point as f64;
        if score > best_score {
            best = p;
            best_score = score;
        }
    }
    Ok(SweepResult { best: points[best], best_mean_f1: best_score, scenarios: grid.scenarios.clone(), rows })
}

pub fn write_sweep_csv<W: Write>(mut w: W, result: &SweepResult) -> Result<()> {
    let f1_cols: Vec<String> = result.scenarios.iter().map(|s| format!("f1_{s}")).collect();
    writeln!(w, "trees,depth,tau,window,seed,{},mean_f1,mean_avg_fbr", f1_cols.join(","))?;
    for r in &result.rows {
        let f1: Vec<String> = r.f1.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(
            w,
            "{},{},{:.2},{},{},{},{:.6},{:.6}",
            r.trees,
            r.depth,
            r.tau,
            r.window,
            r.seed,
            f1.join(","),
            r.mean_f1,
            r.mean_avg_fbr
        )?;
    }
    Ok(())
}
