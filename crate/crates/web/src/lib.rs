//! Browser bindings: draw a multi-domain graph, trace the hysteresis rule on
//! a score sequence, and run a preset under all three mitigation schemes.
//!
//! Every export returns a JSON string; the page parses and draws it.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fuhst_core::detectors::fuhst::stabilize;
use fuhst_core::detectors::{FuHstParams, NodeState};
use fuhst_core::harness::{preset, run_scenario, MitigationScheme, ScenarioConfig};
use fuhst_core::topology::generate_sbm_connected;

#[derive(Serialize)]
struct GraphJson {
    domains: Vec<u32>,
    edges: Vec<(u32, u32)>,
    intra_edges: usize,
    inter_edges: usize,
}

pub fn graph_json(sizes: &[usize], p1: f64, p2: f64, seed: u64) -> Result<String, String> {
    if sizes.is_empty() || sizes.iter().sum::<usize>() > 400 {
        return Err("between 1 and 400 nodes please".into());
    }
    let g = generate_sbm_connected(sizes, p1, p2, seed).map_err(|e| e.to_string())?;
    let (intra_edges, inter_edges) = g.edge_classes();
    let out = GraphJson {
        domains: g.domain_assignment().iter().map(|d| d.0).collect(),
        edges: g.edges().into_iter().map(|(a, b)| (a.0, b.0)).collect(),
        intra_edges,
        inter_edges,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TraceStep {
    raw: f64,
    s: f64,
    f: f64,
    c: u32,
    flagged: bool,
}

pub fn trace_json(raw: &[f64], tau: f64, gamma: f64, alpha: f64, beta: f64) -> Result<String, String> {
    let params = FuHstParams { tau, gamma, alpha, beta, ..FuHstParams::default() };
    params.validate().map_err(|e| e.to_string())?;
    let mut state = NodeState::default();
    let steps: Vec<TraceStep> = raw
        .iter()
        .map(|&y| {
            let (next, flagged) = stabilize(state, y.clamp(0.0, 1.0), &params);
            state = next;
            TraceStep { raw: y, s: next.s, f: next.f, c: next.c, flagged }
        })
        .collect();
    serde_json::to_string(&steps).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Curve {
    scheme: &'static str,
    accuracy: Vec<f64>,
    f1: Option<f64>,
    banned: usize,
}

#[derive(Serialize)]
struct CurvesJson {
    scenario: String,
    nodes: usize,
    malicious: Vec<u32>,
    curves: Vec<Curve>,
}

pub fn curves_json(name: &str, seed: u64) -> Result<String, String> {
    let base = preset(name).map_err(|e| e.to_string())?;
    let mut curves = Vec::new();
    let mut malicious = Vec::new();
    let mut nodes = 0;
    for scheme in [MitigationScheme::NoAction, MitigationScheme::Mitigate, MitigationScheme::Oracle] {
        let cfg = ScenarioConfig { mitigation: scheme, seed, ..base.clone() };
        let r = run_scenario(&cfg).map_err(|e| e.to_string())?;
        malicious = r.malicious.iter().map(|n| n.0).collect();
        nodes = r.graph.nodes;
        curves.push(Curve {
            scheme: scheme.label(),
            accuracy: r.rounds.iter().map(|x| x.acc_mean).collect(),
            f1: r.detection.as_ref().map(|d| d.f1),
            banned: r.rounds.last().map_or(0, |x| x.banned_total),
        });
    }
    let out = CurvesJson { scenario: base.name, nodes, malicious, curves };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Node domains and edge list of a connected SBM draw.
#[wasm_bindgen]
pub fn sbm_graph(sizes: Vec<u32>, p1: f64, p2: f64, seed: u32) -> Result<String, JsValue> {
    let sizes: Vec<usize> = sizes.into_iter().map(|s| s as usize).collect();
    graph_json(&sizes, p1, p2, seed as u64).map_err(|e| JsValue::from_str(&e))
}

/// Smoothed score, feedback, counter and flag after each raw score.
#[wasm_bindgen]
pub fn hysteresis_trace(raw: Vec<f64>, tau: f64, gamma: f64, alpha: f64, beta: f64) -> Result<String, JsValue> {
    trace_json(&raw, tau, gamma, alpha, beta).map_err(|e| JsValue::from_str(&e))
}

/// Per-round mean accuracy of a preset under NA, MIT and ORA.
#[wasm_bindgen]
pub fn scenario_curves(name: &str, seed: u32) -> Result<String, JsValue> {
    curves_json(name, seed as u64).map_err(|e| JsValue::from_str(&e))
}
