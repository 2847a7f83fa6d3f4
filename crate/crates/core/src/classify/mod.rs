//! The text-classification contract shared by the gate, evidence, role and
//! direction models.
//!
//! A [`ClassifierHandle`] is backed by a locally trained [`LinearModel`], a pattern
//! [`RuleTable`], or a [`RemoteClassifier`]; callers only see [`Classifier::predict`].

pub mod features;
pub mod linear;
pub mod remote;
pub mod rules;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{featurize, FeatureConfig, FeatureVector};
pub use linear::{train, LinearModel, TrainConfig, TrainingMeta};
pub use remote::{RemoteClassifier, RemoteClient, RemoteSpec};
pub use rules::{RuleSpec, RuleTable, RulesSpec};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("training data contains fewer than two classes")]
    SingleClass,
    #[error("training data is empty")]
    EmptyTrainingSet,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss became {loss} at epoch {epoch}; lower the learning rate or raise l2")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("bad response from remote model: {0}")]
    BadResponse(String),
    #[error("task {task} has no class {label}")]
    MissingLabel { task: String, label: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Input to a classifier: text segments joined by separators in the underlying model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledExample {
    pub segments: Vec<String>,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(segments: Vec<String>, label: usize) -> Self {
        LabeledExample { segments, label }
    }
}

/// The four model tasks of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Rct,
    Evidence,
    Role,
    Direction,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Rct => "rct",
            Task::Evidence => "evidence",
            Task::Role => "role",
            Task::Direction => "direction",
        }
    }

    /// Fixed class order for the task.
    pub fn labels(self) -> Vec<String> {
        let l: &[&str] = match self {
            Task::Rct => &["not_rct", "rct"],
            Task::Evidence => &["other", "evidence"],
            Task::Role => &["intervention", "comparator", "not_involved"],
            Task::Direction => &["increased", "decreased", "no_difference"],
        };
        l.iter().map(|s| s.to_string()).collect()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rct" => Ok(Task::Rct),
            "evidence" => Ok(Task::Evidence),
            "role" => Ok(Task::Role),
            "direction" => Ok(Task::Direction),
            other => Err(format!("unknown task '{other}'")),
        }
    }
}

pub trait Classifier: Send + Sync {
    fn task(&self) -> &str;
    fn labels(&self) -> &[String];
    /// Probability distribution over [`Classifier::labels`].
    fn predict(&self, segments: &[String]) -> Result<Vec<f64>, ClassifyError>;

    fn label_index(&self, label: &str) -> Result<usize, ClassifyError> {
        self.labels()
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ClassifyError::MissingLabel {
                task: self.task().to_string(),
                label: label.to_string(),
            })
    }
}

/// Predict the class distribution of one example.
pub fn predict(clf: &dyn Classifier, example: &LabeledExample) -> Result<Vec<f64>, ClassifyError> {
    clf.predict(&example.segments)
}

impl Classifier for LinearModel {
    fn task(&self) -> &str {
        &self.task
    }

    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn predict(&self, segments: &[String]) -> Result<Vec<f64>, ClassifyError> {
        Ok(self.predict_segments(segments))
    }
}

#[derive(Debug)]
pub enum ClassifierHandle {
    Linear(LinearModel),
    Rules(RuleTable),
    Remote(RemoteClassifier),
}

impl Classifier for ClassifierHandle {
    fn task(&self) -> &str {
        match self {
            ClassifierHandle::Linear(m) => m.task(),
            ClassifierHandle::Rules(r) => r.task(),
            ClassifierHandle::Remote(r) => r.task(),
        }
    }

    fn labels(&self) -> &[String] {
        match self {
            ClassifierHandle::Linear(m) => m.labels(),
            ClassifierHandle::Rules(r) => r.labels(),
            ClassifierHandle::Remote(r) => r.labels(),
        }
    }

    fn predict(&self, segments: &[String]) -> Result<Vec<f64>, ClassifyError> {
        match self {
            ClassifierHandle::Linear(m) => m.predict(segments),
            ClassifierHandle::Rules(r) => r.predict(segments),
            ClassifierHandle::Remote(r) => r.predict(segments),
        }
    }
}

/// Linear model on disk: only non-zero weights are stored as `[class, feature, value]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFile {
    pub task: String,
    pub labels: Vec<String>,
    pub features: FeatureConfig,
    pub bias: Vec<f64>,
    pub weights: Vec<(u32, u32, f64)>,
    #[serde(default)]
    pub meta: TrainingMeta,
}

/// Self-describing model container.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    Linear(LinearFile),
    Rules(RulesSpec),
    Remote(RemoteSpec),
}

impl From<&LinearModel> for LinearFile {
    fn from(m: &LinearModel) -> Self {
        let dim = m.dim();
        let weights = m
            .weights()
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| ((i / dim) as u32, (i % dim) as u32, *w))
            .collect();
        LinearFile {
            task: m.task.clone(),
            labels: m.labels.clone(),
            features: m.features,
            bias: m.bias().to_vec(),
            weights,
            meta: m.meta.clone(),
        }
    }
}

impl TryFrom<LinearFile> for LinearModel {
    type Error = ClassifyError;

    fn try_from(f: LinearFile) -> Result<Self, Self::Error> {
        if !(1..=30).contains(&f.features.hash_bits) {
            return Err(ClassifyError::InvalidModel("hash_bits out of range".into()));
        }
        let dim = f.features.dim();
        let k = f.labels.len();
        let mut weights = vec![0.0; k * dim];
        for (c, i, w) in f.weights {
            let (c, i) = (c as usize, i as usize);
            if c >= k || i >= dim {
                return Err(ClassifyError::InvalidModel(format!(
                    "weight index ({c}, {i}) out of range"
                )));
            }
            weights[c * dim + i] = w;
        }
        let mut m = LinearModel::from_parts(f.task, f.labels, f.features, weights, f.bias)?;
        m.meta = f.meta;
        Ok(m)
    }
}

impl ClassifierHandle {
    pub fn from_file(file: ModelFile) -> Result<Self, ClassifyError> {
        Ok(match file {
            ModelFile::Linear(f) => ClassifierHandle::Linear(f.try_into()?),
            ModelFile::Rules(spec) => ClassifierHandle::Rules(RuleTable::new(spec)?),
            ModelFile::Remote(spec) => ClassifierHandle::Remote(RemoteClassifier::new(spec)?),
        })
    }

    pub fn to_file(&self) -> ModelFile {
        match self {
            ClassifierHandle::Linear(m) => ModelFile::Linear(m.into()),
            ClassifierHandle::Rules(r) => ModelFile::Rules(r.spec().clone()),
            ClassifierHandle::Remote(r) => ModelFile::Remote(r.spec().clone()),
        }
    }

    /// Load from a model file, or connect to a remote model when given an http(s) URL.
    /// For URLs the class order is the task's fixed order.
    pub fn load(location: &str, task: Task) -> Result<Self, ClassifyError> {
        if location.starts_with("http://") || location.starts_with("https://") {
            return Ok(ClassifierHandle::Remote(RemoteClassifier::new(RemoteSpec {
                task: task.name().to_string(),
                labels: task.labels(),
                url: location.to_string(),
                max_in_flight: 8,
                timeout_ms: 30_000,
            })?));
        }
        Self::load_path(Path::new(location))
    }

    pub fn load_path(path: &Path) -> Result<Self, ClassifyError> {
        let io = |e| ClassifyError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let content = fs::read_to_string(path).map_err(io)?;
        let file: ModelFile = serde_json::from_str(&content)
            .map_err(|e| ClassifyError::InvalidModel(format!("{}: {e}", path.display())))?;
        Self::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifyError> {
        let json = serde_json::to_string(&self.to_file())
            .map_err(|e| ClassifyError::InvalidModel(e.to_string()))?;
        fs::write(path, json).map_err(|e| ClassifyError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}
