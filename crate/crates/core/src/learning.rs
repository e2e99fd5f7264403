//! Desk-scale local learning: a synthetic Gaussian-cluster classification
//! task, a dense-parameter classifier and plain minibatch SGD.
//!
//! Models are flat [`ParamVector`]s so attacks and aggregation treat every
//! model the same way. An optional zero-gradient padding tail inflates the
//! vector to a target dimension for communication-cost experiments.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Dense model parameters, the unit that is shared, attacked and aggregated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelKind {
    LinearSoftmax,
    OneHiddenLayer { width: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub model: ModelKind,
    /// Total shared-vector dimension; entries past the model are inert.
    pub pad_to: Option<usize>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            local_epochs: 1,
            batch_size: 8,
            model: ModelKind::LinearSoftmax,
            pad_to: None,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if let ModelKind::OneHiddenLayer { width: 0 } = self.model {
            return Err(Error::config("hidden width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub classes: usize,
    pub in_dim: usize,
    pub samples_per_node: usize,
    /// Euclidean distance between any two class means, in noise units.
    pub class_separation: f64,
    pub test_fraction: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            in_dim: 16,
            samples_per_node: 200,
            class_separation: 3.5,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub classes: usize,
}

impl NodeDataset {
    pub fn in_dim(&self) -> usize {
        self.train.first().or(self.test.first()).map_or(0, |s| s.features.len())
    }
}

/// Shape of the flat parameter layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Model {
    pub in_dim: usize,
    pub classes: usize,
    pub kind: ModelKind,
    pub pad_to: Option<usize>,
}

impl Model {
    pub fn new(in_dim: usize, classes: usize, cfg: &LearnerConfig) -> Self {
        Self { in_dim, classes, kind: cfg.model, pad_to: cfg.pad_to }
    }

    pub fn for_task(task: &TaskConfig, cfg: &LearnerConfig) -> Self {
        Self::new(task.in_dim, task.classes, cfg)
    }

    /// Parameters actually used by the classifier.
    pub fn active_dim(&self) -> usize {
        match self.kind {
            ModelKind::LinearSoftmax => self.classes * self.in_dim + self.classes,
            ModelKind::OneHiddenLayer { width } => {
                width * self.in_dim + width + self.classes * width + self.classes
            }
        }
    }

    /// Shared-vector dimension including padding.
    pub fn dim(&self) -> usize {
        self.pad_to.map_or(self.active_dim(), |p| p.max(self.active_dim()))
    }

    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = rng::rng_for(seed, Stream::Init, 0, 0);
        let mut v = vec![0.0; self.dim()];
        let (scale_in, scale_hidden) = match self.kind {
            ModelKind::LinearSoftmax => (0.01, 0.0),
            ModelKind::OneHiddenLayer { width } => {
                ((1.0 / self.in_dim as f64).sqrt(), (1.0 / width as f64).sqrt())
            }
        };
        match self.kind {
            ModelKind::LinearSoftmax => {
                for w in &mut v[..self.classes * self.in_dim] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *w = scale_in * z;
                }
            }
            ModelKind::OneHiddenLayer { width } => {
                let w1 = width * self.in_dim;
                for w in &mut v[..w1] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *w = scale_in * z;
                }
                let w2_start = w1 + width;
                for w in &mut v[w2_start..w2_start + self.classes * width] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *w = scale_hidden * z;
                }
            }
        }
        ParamVector(v)
    }

    fn check(&self, params: &ParamVector) -> Result<()> {
        if params.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: params.dim() });
        }
        Ok(())
    }

    pub fn logits(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let (c, d) = (self.classes, self.in_dim);
        match self.kind {
            ModelKind::LinearSoftmax => {
                let (w, b) = (&p[..c * d], &p[c * d..c * d + c]);
                (0..c).map(|k| b[k] + dot(&w[k * d..(k + 1) * d], x)).collect()
            }
            ModelKind::OneHiddenLayer { width } => {
                let h = self.hidden(p, x, width);
                let off = width * d + width;
                let (w2, b2) = (&p[off..off + c * width], &p[off + c * width..off + c * width + c]);
                (0..c).map(|k| b2[k] + dot(&w2[k * width..(k + 1) * width], &h)).collect()
            }
        }
    }

    fn hidden(&self, p: &[f64], x: &[f64], width: usize) -> Vec<f64> {
        let d = self.in_dim;
        let (w1, b1) = (&p[..width * d], &p[width * d..width * d + width]);
        (0..width).map(|u| (b1[u] + dot(&w1[u * d..(u + 1) * d], x)).tanh()).collect()
    }

    pub fn predict(&self, p: &[f64], x: &[f64]) -> usize {
        argmax(&self.logits(p, x))
    }

    /// Mean cross-entropy over `batch`.
    pub fn loss(&self, params: &ParamVector, batch: &[Sample]) -> f64 {
        batch
            .iter()
            .map(|s| {
                let z = self.logits(&params.0, &s.features);
                log_sum_exp(&z) - z[s.label]
            })
            .sum::<f64>()
            / batch.len().max(1) as f64
    }

    /// Mean cross-entropy and its gradient over `batch` (padding gets zero).
    pub fn loss_and_grad(&self, params: &ParamVector, batch: &[Sample]) -> (f64, Vec<f64>) {
        let p = &params.0;
        let (c, d) = (self.classes, self.in_dim);
        let mut grad = vec![0.0; p.len()];
        let mut loss = 0.0;
        for s in batch {
            let x = &s.features;
            match self.kind {
                ModelKind::LinearSoftmax => {
                    let z = self.logits(p, x);
                    let lse = log_sum_exp(&z);
                    loss += lse - z[s.label];
                    for k in 0..c {
                        let dz = (z[k] - lse).exp() - if k == s.label { 1.0 } else { 0.0 };
                        axpy(dz, x, &mut grad[k * d..(k + 1) * d]);
                        grad[c * d + k] += dz;
                    }
                }
                ModelKind::OneHiddenLayer { width } => {
                    let h = self.hidden(p, x, width);
                    let off = width * d + width;
                    let w2 = &p[off..off + c * width];
                    let z: Vec<f64> = (0..c)
                        .map(|k| p[off + c * width + k] + dot(&w2[k * width..(k + 1) * width], &h))
                        .collect();
                    let lse = log_sum_exp(&z);
                    loss += lse - z[s.label];
                    let mut dh = vec![0.0; width];
                    for k in 0..c {
                        let dz = (z[k] - lse).exp() - if k == s.label { 1.0 } else { 0.0 };
                        axpy(dz, &h, &mut grad[off + k * width..off + (k + 1) * width]);
                        grad[off + c * width + k] += dz;
                        axpy(dz, &w2[k * width..(k + 1) * width], &mut dh);
                    }
                    for u in 0..width {
                        let da = dh[u] * (1.0 - h[u] * h[u]);
                        axpy(da, x, &mut grad[u * d..(u + 1) * d]);
                        grad[width * d + u] += da;
                    }
                }
            }
        }
        let n = batch.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Index of the largest value; ties resolve to the lowest index.
fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = k;
        }
    }
    best
}

/// Orthonormal directions via Gram-Schmidt on Gaussian draws.
fn orthonormal_directions<R: Rng>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let proj = dot(&v, b);
            axpy(-proj, b, &mut v);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

/// IID Gaussian class clusters shared by all nodes. Class means sit on
/// orthonormal directions so every pair is `class_separation` apart; labels
/// are exactly balanced in both splits.
pub fn generate_synthetic_task(n_nodes: usize, task: &TaskConfig, seed: u64) -> Result<Vec<NodeDataset>> {
    let TaskConfig { classes, in_dim, samples_per_node, class_separation, test_fraction } = *task;
    if classes < 2 {
        return Err(Error::config("the task needs at least two classes"));
    }
    if samples_per_node < 2 * classes {
        return Err(Error::config(format!(
            "samples_per_node = {samples_per_node} is below 2 x classes = {}",
            2 * classes
        )));
    }
    if in_dim < classes {
        return Err(Error::config("in_dim must be at least the number of classes"));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config("test_fraction must lie in (0, 1)"));
    }
    let mut rng = rng::rng_for(seed, Stream::Dataset, u64::MAX, 0);
    let scale = class_separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = orthonormal_directions(classes, in_dim, &mut rng)
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * scale).collect())
        .collect();
    let n_test = ((samples_per_node as f64 * test_fraction).round() as usize).clamp(classes, samples_per_node - classes);
    (0..n_nodes)
        .map(|node| {
            let mut rng = rng::rng_for(seed, Stream::Dataset, node as u64, 0);
            let mut draw = |count: usize| -> Vec<Sample> {
                (0..count)
                    .map(|k| {
                        let label = k % classes;
                        let features = means[label]
                            .iter()
                            .map(|m| m + Distribution::<f64>::sample(&StandardNormal, &mut rng))
                            .collect::<Vec<f64>>();
                        Sample { features, label }
                    })
                    .collect()
            };
            let test = draw(n_test);
            let mut train = draw(samples_per_node - n_test);
            train.shuffle(&mut rng);
            Ok(NodeDataset { train, test, classes })
        })
        .collect()
}

/// `cfg.local_epochs` shuffled minibatch SGD passes over the local train
/// split. Pure in `(params, data, cfg, seed)`.
pub fn local_train(params: &ParamVector, data: &NodeDataset, cfg: &LearnerConfig, seed: u64) -> Result<ParamVector> {
    let model = Model::new(data.in_dim(), data.classes, cfg);
    model.check(params)?;
    let mut p = params.clone();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut rng = rng::rng_for(seed, Stream::Train, 0, 0);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| data.train[k].clone()));
            let (_, grad) = model.loss_and_grad(&p, &batch);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Protocol("non-finite gradient during local training".into()));
            }
            axpy(-cfg.learning_rate, &grad, &mut p.0);
        }
    }
    Ok(p)
}

/// Fraction of correctly classified test samples.
pub fn evaluate(params: &ParamVector, data: &NodeDataset, cfg: &LearnerConfig) -> Result<f64> {
    if data.test.is_empty() {
        return Err(Error::EmptyInput("evaluation needs a non-empty test set"));
    }
    let model = Model::new(data.in_dim(), data.classes, cfg);
    model.check(params)?;
    let correct = data
        .test
        .iter()
        .filter(|s| model.predict(&params.0, &s.features) == s.label)
        .count();
    Ok(correct as f64 / data.test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_task() -> TaskConfig {
        TaskConfig { classes: 4, in_dim: 16, samples_per_node: 200, ..TaskConfig::default() }
    }

    #[test]
    fn default_linear_model_has_68_parameters() {
        let m = Model::for_task(&TaskConfig::default(), &LearnerConfig::default());
        assert_eq!(m.dim(), 68);
        let padded = Model::for_task(
            &TaskConfig::default(),
            &LearnerConfig { pad_to: Some(10_000), ..LearnerConfig::default() },
        );
        assert_eq!(padded.dim(), 10_000);
        assert_eq!(padded.active_dim(), 68);
    }

    #[test]
    fn task_is_deterministic_and_balanced() {
        let a = generate_synthetic_task(3, &small_task(), 5).unwrap();
        let b = generate_synthetic_task(3, &small_task(), 5).unwrap();
        assert_eq!(a, b);
        for d in &a {
            let mut hist = [0usize; 4];
            d.train.iter().chain(&d.test).for_each(|s| hist[s.label] += 1);
            for h in hist {
                assert!((40..=60).contains(&h), "{hist:?}");
            }
            let mut test_hist = [0usize; 4];
            d.test.iter().for_each(|s| test_hist[s.label] += 1);
            assert_eq!(test_hist, [10; 4]);
        }
    }

    #[test]
    fn degenerate_task_sizes_are_rejected() {
        let t = TaskConfig { classes: 1, ..TaskConfig::default() };
        assert!(generate_synthetic_task(2, &t, 0).is_err());
        let t = TaskConfig { samples_per_node: 7, ..TaskConfig::default() };
        assert!(generate_synthetic_task(2, &t, 0).is_err());
    }

    #[test]
    fn well_separated_binary_task_is_learned() {
        let task = TaskConfig { classes: 2, in_dim: 16, class_separation: 10.0, ..TaskConfig::default() };
        let data = generate_synthetic_task(1, &task, 3).unwrap().remove(0);
        let cfg = LearnerConfig { local_epochs: 5, ..LearnerConfig::default() };
        let model = Model::for_task(&task, &cfg);
        let p = local_train(&model.init(1), &data, &cfg, 9).unwrap();
        assert!(evaluate(&p, &data, &cfg).unwrap() >= 0.99);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let task = small_task();
        let data = generate_synthetic_task(1, &task, 3).unwrap().remove(0);
        let cfg = LearnerConfig { learning_rate: 0.0, ..LearnerConfig::default() };
        let p0 = Model::for_task(&task, &cfg).init(4);
        assert_eq!(local_train(&p0, &data, &cfg, 1).unwrap(), p0);
    }

    fn finite_difference_check(kind: ModelKind, in_dim: usize, classes: usize) {
        let task = TaskConfig { classes, in_dim, samples_per_node: 20, ..TaskConfig::default() };
        let data = generate_synthetic_task(1, &task, 8).unwrap().remove(0);
        let cfg = LearnerConfig { model: kind, ..LearnerConfig::default() };
        let model = Model::for_task(&task, &cfg);
        let mut p = model.init(2);
        // Move away from the near-zero init so every logit matters.
        let mut rng = rng::rng_for(3, Stream::Init, 1, 1);
        p.0.iter_mut().for_each(|v| *v += 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let (_, grad) = model.loss_and_grad(&p, &data.train);
        let h = 1e-6;
        for (k, &g) in grad.iter().enumerate() {
            let mut plus = p.clone();
            plus.0[k] += h;
            let mut minus = p.clone();
            minus.0[k] -= h;
            let fd = (model.loss(&plus, &data.train) - model.loss(&minus, &data.train)) / (2.0 * h);
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
            assert!(rel < 1e-4 || (fd - g).abs() < 1e-9, "param {k}: fd {fd} vs analytic {g}");
        }
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        // 4 inputs x 2 classes + 2 biases = 10 parameters.
        finite_difference_check(ModelKind::LinearSoftmax, 4, 2);
    }

    #[test]
    fn hidden_layer_gradient_matches_finite_differences() {
        finite_difference_check(ModelKind::OneHiddenLayer { width: 3 }, 4, 2);
    }

    #[test]
    fn one_epoch_does_not_increase_convex_loss() {
        let task = small_task();
        let data = generate_synthetic_task(1, &task, 21).unwrap().remove(0);
        let cfg = LearnerConfig { learning_rate: 0.001, batch_size: data.train.len(), ..LearnerConfig::default() };
        let model = Model::for_task(&task, &cfg);
        let p0 = model.init(1);
        let p1 = local_train(&p0, &data, &cfg, 2).unwrap();
        assert!(model.loss(&p1, &data.train) <= model.loss(&p0, &data.train));
    }

    #[test]
    fn constant_predictor_on_balanced_binary_test_scores_half() {
        let task = TaskConfig { classes: 2, ..TaskConfig::default() };
        let data = generate_synthetic_task(1, &task, 0).unwrap().remove(0);
        let cfg = LearnerConfig::default();
        let zeros = ParamVector::zeros(Model::for_task(&task, &cfg).dim());
        assert_eq!(evaluate(&zeros, &data, &cfg).unwrap(), 0.5);
    }

    #[test]
    fn evaluate_matches_hand_count() {
        // 1-d inputs, 2 classes; class 1 wins iff x > 0.
        let cfg = LearnerConfig::default();
        let params = ParamVector(vec![-1.0, 1.0, 0.0, 0.0]);
        let xs = [-2.0, -1.0, 0.5, 1.0, 3.0, -0.5, 2.0, -3.0, 0.25, -0.1];
        let labels = [0, 0, 1, 0, 1, 1, 1, 0, 0, 0];
        let test: Vec<Sample> = xs
            .iter()
            .zip(labels)
            .map(|(&x, label)| Sample { features: vec![x], label })
            .collect();
        let data = NodeDataset { train: test.clone(), test, classes: 2 };
        // Hand count: predictions 0,0,1,1,1,0,1,0,1,0 vs labels -> 7 correct.
        assert_eq!(evaluate(&params, &data, &cfg).unwrap(), 0.7);
        let empty = NodeDataset { train: vec![], test: vec![], classes: 2 };
        assert!(evaluate(&params, &empty, &cfg).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let task = small_task();
        let data = generate_synthetic_task(1, &task, 0).unwrap().remove(0);
        let cfg = LearnerConfig::default();
        assert!(matches!(
            local_train(&ParamVector::zeros(3), &data, &cfg, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn padding_tail_is_untouched_by_training() {
        let task = small_task();
        let data = generate_synthetic_task(1, &task, 0).unwrap().remove(0);
        let cfg = LearnerConfig { pad_to: Some(100), ..LearnerConfig::default() };
        let mut p = Model::for_task(&task, &cfg).init(0);
        p.0[90] = 0.5;
        let q = local_train(&p, &data, &cfg, 1).unwrap();
        assert_eq!(&q.0[68..], &p.0[68..]);
    }
}
