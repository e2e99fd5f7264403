//! Per-node feature synthesis from the alerts a node received in one round.

use serde::{Deserialize, Serialize};

/// Added to the dispersion before standardizing.
pub const Z_EPS: f64 = 1e-9;

/// Default fixed width of the sorted alert block.
pub const DEFAULT_K_MAX: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Alerts sorted ascending, truncated or padded with 1.0 to `k_max`.
    pub padded_alerts: Vec<f64>,
    pub mean_alert: f64,
    /// Mean standardized deviation of the alerts (unbounded).
    pub mean_z: f64,
    pub feedback_prev: f64,
}

impl FeatureVector {
    /// Dimension of [`FeatureVector::to_point`] for a given `k_max`.
    pub fn point_dim(k_max: usize) -> usize {
        k_max + 3
    }

    /// Flatten into the unit hypercube: alerts, mean, logistic(mean_z),
    /// feedback.
    pub fn to_point(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.padded_alerts.len() + 3);
        p.extend_from_slice(&self.padded_alerts);
        p.push(self.mean_alert);
        p.push(squash(self.mean_z));
        p.push(self.feedback_prev);
        p
    }
}

pub fn squash(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `None` when no alerts were received (the node is skipped this round).
pub fn synthesize_features(alerts: &[f64], feedback_prev: f64, k_max: usize) -> Option<FeatureVector> {
    if alerts.is_empty() {
        return None;
    }
    let n = alerts.len() as f64;
    // Shifted accumulation keeps the mean of identical alerts exact.
    let w0 = alerts[0];
    let mean_alert = w0 + alerts.iter().map(|w| w - w0).sum::<f64>() / n;
    let sigma = (alerts.iter().map(|w| (w - mean_alert).powi(2)).sum::<f64>() / n).sqrt();
    let mean_z = alerts.iter().map(|w| (w - mean_alert) / (sigma + Z_EPS)).sum::<f64>() / n;
    let mut padded_alerts: Vec<f64> = alerts.to_vec();
    padded_alerts.sort_by(f64::total_cmp);
    padded_alerts.resize(k_max, 1.0);
    Some(FeatureVector { padded_alerts, mean_alert, mean_z, feedback_prev })
}
