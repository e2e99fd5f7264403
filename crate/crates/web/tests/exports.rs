use fuhst_web::{curves_json, graph_json, trace_json};
use serde_json::Value;

#[test]
fn graph_has_domains_and_edges() {
    let v: Value = serde_json::from_str(&graph_json(&[10, 10, 10], 0.4, 0.05, 3).unwrap()).unwrap();
    assert_eq!(v["domains"].as_array().unwrap().len(), 30);
    let edges = v["edges"].as_array().unwrap().len() as u64;
    assert_eq!(edges, v["intra_edges"].as_u64().unwrap() + v["inter_edges"].as_u64().unwrap());
    assert!(graph_json(&[], 0.4, 0.0, 1).is_err());
}

#[test]
fn trace_follows_the_hand_worked_steps() {
    let v: Value = serde_json::from_str(&trace_json(&[0.8, 0.8, 0.2], 0.55, 0.5, 0.5, 0.9).unwrap()).unwrap();
    let steps = v.as_array().unwrap();
    assert_eq!(steps[0]["s"], 0.4);
    assert_eq!(steps[0]["flagged"], false);
    assert_eq!(steps[1]["s"], 0.6000000000000001);
    assert_eq!(steps[1]["flagged"], true);
    assert_eq!(steps[2]["s"], 0.0);
    assert_eq!(steps[2]["c"], 0);
    assert!(trace_json(&[0.5], 0.55, 1.5, 0.5, 0.9).is_err());
}

#[test]
fn curves_cover_three_schemes() {
    let v: Value = serde_json::from_str(&curves_json("s1", 0).unwrap()).unwrap();
    let curves = v["curves"].as_array().unwrap();
    assert_eq!(curves.len(), 3);
    assert!(curves[0]["f1"].is_null());
    assert_eq!(curves[1]["accuracy"].as_array().unwrap().len(), 20);
    assert!(curves_json("nope", 0).is_err());
}
