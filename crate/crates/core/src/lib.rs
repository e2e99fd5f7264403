//! Multi-domain decentralized federated learning (DFL) simulator with a
//! per-domain streaming anomaly detector and ban-based mitigation.
//!
//! The crate is organised bottom-up:
//!
//! - [`topology`]: stochastic block model and k-regular communication graphs.
//! - [`learning`]: the synthetic classification task and local SGD.
//! - [`adversary`]: Byzantine model-poisoning attacks and malicious placement.
//! - [`aggregation`]: ban-aware trust-weighted aggregation emitting alerts.
//! - [`detectors`]: half-space trees, the feedback-updated HST wrapper and
//!   the SAD / incremental LOF baselines.
//! - [`sdn`]: per-domain alert collection, inter-domain relay and ban notices.
//! - [`metrics`]: confusion-matrix metrics with both FBR conventions.
//! - [`harness`]: the round loop, presets, pre-training, sweeps and reports.

pub mod adversary;
pub mod aggregation;
pub mod detectors;
mod error;
pub mod harness;
pub mod learning;
pub mod metrics;
pub mod rng;
pub mod sdn;
pub mod topology;

pub use error::{Error, Result};
pub use topology::{DomainId, MultiDomainGraph, NodeId};
