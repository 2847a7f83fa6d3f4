//! Multinomial logistic regression over hashed features, trained by seeded SGD or
//! full-batch gradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{featurize, FeatureConfig, FeatureVector};
use super::{ClassifyError, LabeledExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Plain gradient descent on the full objective instead of per-example updates.
    #[serde(default)]
    pub full_batch: bool,
    #[serde(default)]
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 0.5,
            l2: 1e-6,
            seed: 13,
            full_batch: false,
            features: FeatureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub full_batch: bool,
    pub examples: usize,
    /// Objective on the training set before the first epoch and after each epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub task: String,
    pub labels: Vec<String>,
    pub features: FeatureConfig,
    /// Class-major: `weights[class * dim + feature]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    pub meta: TrainingMeta,
}

/// Dense gradient of the training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl LinearModel {
    pub fn zeros(task: impl Into<String>, labels: Vec<String>, features: FeatureConfig) -> Self {
        let k = labels.len();
        LinearModel {
            task: task.into(),
            weights: vec![0.0; k * features.dim()],
            bias: vec![0.0; k],
            labels,
            features,
            meta: TrainingMeta::default(),
        }
    }

    pub fn from_parts(
        task: impl Into<String>,
        labels: Vec<String>,
        features: FeatureConfig,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, ClassifyError> {
        let k = labels.len();
        if weights.len() != k * features.dim() || bias.len() != k {
            return Err(ClassifyError::InvalidModel(format!(
                "expected {} weights and {} biases, got {} and {}",
                k * features.dim(),
                k,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(ClassifyError::InvalidModel("non-finite parameter".into()));
        }
        Ok(LinearModel {
            task: task.into(),
            labels,
            features,
            weights,
            bias,
            meta: TrainingMeta::default(),
        })
    }

    pub fn class_count(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn scores(&self, x: &FeatureVector) -> Vec<f64> {
        let dim = self.dim();
        (0..self.class_count())
            .map(|k| {
                let row = &self.weights[k * dim..(k + 1) * dim];
                self.bias[k] + x.iter().map(|(i, v)| row[i] * v).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_features(&self, x: &FeatureVector) -> Vec<f64> {
        softmax(&self.scores(x))
    }

    pub fn predict_segments(&self, segments: &[String]) -> Vec<f64> {
        self.predict_features(&featurize(segments, &self.features))
    }

    pub fn featurize(&self, segments: &[String]) -> FeatureVector {
        featurize(segments, &self.features)
    }
}

fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

/// Mean cross-entropy over `data`, without regularization.
pub fn log_loss(model: &LinearModel, data: &[(FeatureVector, usize)]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.iter()
        .map(|(x, y)| cross_entropy(&model.predict_features(x), *y))
        .sum::<f64>()
        / data.len() as f64
}

/// Training objective `mean CE + l2/2 * |W|^2` (bias unregularized) and its gradient.
pub fn objective(model: &LinearModel, data: &[(FeatureVector, usize)], l2: f64) -> (f64, Gradient) {
    let k = model.class_count();
    let dim = model.dim();
    let mut gw = vec![0.0; k * dim];
    let mut gb = vec![0.0; k];
    let n = data.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, y) in data {
        let p = model.predict_features(x);
        loss += cross_entropy(&p, *y);
        for c in 0..k {
            let g = p[c] - if c == *y { 1.0 } else { 0.0 };
            gb[c] += g / n;
            let row = &mut gw[c * dim..(c + 1) * dim];
            for (i, v) in x.iter() {
                row[i] += g * v / n;
            }
        }
    }
    loss /= n;
    if l2 > 0.0 {
        let mut sq = 0.0;
        for (g, w) in gw.iter_mut().zip(&model.weights) {
            *g += l2 * w;
            sq += w * w;
        }
        loss += 0.5 * l2 * sq;
    }
    (loss, Gradient { weights: gw, bias: gb })
}

fn validate(
    labels: &[String],
    examples: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<(), ClassifyError> {
    if labels.len() < 2 {
        return Err(ClassifyError::InvalidConfig(
            "a task needs at least two classes".into(),
        ));
    }
    if examples.is_empty() {
        return Err(ClassifyError::EmptyTrainingSet);
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(ClassifyError::InvalidConfig(format!(
            "learning_rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    if !(cfg.l2 >= 0.0 && cfg.l2.is_finite()) {
        return Err(ClassifyError::InvalidConfig(format!(
            "l2 must be non-negative, got {}",
            cfg.l2
        )));
    }
    if !(1..=30).contains(&cfg.features.hash_bits) {
        return Err(ClassifyError::InvalidConfig(
            "hash_bits must be in 1..=30".into(),
        ));
    }
    let mut present = vec![false; labels.len()];
    for e in examples {
        if e.label >= labels.len() {
            return Err(ClassifyError::LabelOutOfRange {
                label: e.label,
                classes: labels.len(),
            });
        }
        present[e.label] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(ClassifyError::SingleClass);
    }
    Ok(())
}

/// Train a model. Examples are put in a canonical order first, so the result depends
/// only on the example multiset, the config and the seed.
pub fn train(
    task: &str,
    labels: &[String],
    examples: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<LinearModel, ClassifyError> {
    validate(labels, examples, cfg)?;
    let mut ordered: Vec<&LabeledExample> = examples.iter().collect();
    ordered.sort_by(|a, b| a.label.cmp(&b.label).then_with(|| a.segments.cmp(&b.segments)));
    let data: Vec<(FeatureVector, usize)> = ordered
        .iter()
        .map(|e| (featurize(&e.segments, &cfg.features), e.label))
        .collect();

    let mut model = LinearModel::zeros(task, labels.to_vec(), cfg.features);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let check = |loss: f64, epoch: usize| {
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(ClassifyError::NonFiniteLoss { epoch, loss })
        }
    };

    if cfg.full_batch {
        for epoch in 0..cfg.epochs {
            let (loss, grad) = objective(&model, &data, cfg.l2);
            history.push(check(loss, epoch)?);
            for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
                *w -= cfg.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
                *b -= cfg.learning_rate * g;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let k = model.class_count();
        let dim = model.dim();
        for epoch in 0..cfg.epochs {
            history.push(check(objective_value(&model, &data, cfg.l2), epoch)?);
            order.shuffle(&mut rng);
            // weights are held as `scale * v` so the l2 shrink is O(1) per step
            let mut scale = 1.0;
            let decay = 1.0 - cfg.learning_rate * cfg.l2 / data.len() as f64;
            for &i in &order {
                let (x, y) = &data[i];
                let scores: Vec<f64> = (0..k)
                    .map(|c| {
                        let row = &model.weights[c * dim..(c + 1) * dim];
                        model.bias[c] + scale * x.iter().map(|(j, v)| row[j] * v).sum::<f64>()
                    })
                    .collect();
                let p = softmax(&scores);
                if cfg.l2 > 0.0 {
                    scale *= decay;
                }
                for (c, pc) in p.iter().enumerate() {
                    let g = pc - if c == *y { 1.0 } else { 0.0 };
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut model.weights[c * dim..(c + 1) * dim];
                    for (j, v) in x.iter() {
                        row[j] -= cfg.learning_rate * g * v / scale;
                    }
                    model.bias[c] -= cfg.learning_rate * g;
                }
                if scale < 1e-6 {
                    model.weights.iter_mut().for_each(|w| *w *= scale);
                    scale = 1.0;
                }
            }
            if scale != 1.0 {
                model.weights.iter_mut().for_each(|w| *w *= scale);
            }
        }
    }
    history.push(check(objective_value(&model, &data, cfg.l2), cfg.epochs)?);
    model.meta = TrainingMeta {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        l2: cfg.l2,
        seed: cfg.seed,
        full_batch: cfg.full_batch,
        examples: data.len(),
        loss_history: history,
    };
    Ok(model)
}

fn objective_value(model: &LinearModel, data: &[(FeatureVector, usize)], l2: f64) -> f64 {
    let mut loss = log_loss(model, data);
    if l2 > 0.0 {
        loss += 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    }
    loss
}
