//! TOML configuration. Relative paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::evidence::{DEFAULT_EVIDENCE_THRESHOLD, DEFAULT_ROLE_THRESHOLD};
use crate::gate::DEFAULT_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_version")]
    pub pipeline_version: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub paths: Paths,
    pub models: Models,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub api: ApiConfig,
    /// Directory the relative paths are resolved against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub store: String,
    pub ontology: String,
    /// Synonym TSV; ignored when `dictionary` is set.
    #[serde(default)]
    pub synonyms: Option<String>,
    /// Prebuilt dictionary JSON from `build-dict`.
    #[serde(default)]
    pub dictionary: Option<String>,
    #[serde(default)]
    pub gazetteer: Option<String>,
}

/// Model files or http(s) URLs of remote models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Models {
    pub rct: String,
    pub evidence: String,
    pub role: String,
    pub direction: String,
    /// Remote token tagger; the gazetteer tagger is used when absent.
    #[serde(default)]
    pub pico: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "default_gate")]
    pub gate: f64,
    #[serde(default = "default_evidence")]
    pub evidence: f64,
    #[serde(default = "default_role")]
    pub role: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            gate: DEFAULT_THRESHOLD,
            evidence: DEFAULT_EVIDENCE_THRESHOLD,
            role: DEFAULT_ROLE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiConfig {
    #[serde(default = "default_autocomplete")]
    pub autocomplete_limit: usize,
    #[serde(default = "default_page")]
    pub page_size: usize,
    #[serde(default = "default_top")]
    pub top_k: usize,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            autocomplete_limit: default_autocomplete(),
            page_size: default_page(),
            top_k: default_top(),
        }
    }
}

fn default_version() -> String {
    "1".into()
}
fn default_workers() -> usize {
    4
}
fn default_gate() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_evidence() -> f64 {
    DEFAULT_EVIDENCE_THRESHOLD
}
fn default_role() -> f64 {
    DEFAULT_ROLE_THRESHOLD
}
fn default_autocomplete() -> usize {
    10
}
fn default_page() -> usize {
    50
}
fn default_top() -> usize {
    10
}

impl Config {
    pub fn parse(content: &str, base_dir: &Path) -> Result<Self, ServiceError> {
        let mut c: Config = toml::from_str(content).map_err(|e| ServiceError::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let content = fs::read_to_string(path).map_err(|e| ServiceError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&content, base)
    }

    fn validate(&self) -> Result<(), ServiceError> {
        let t = &self.thresholds;
        for (name, v) in [("gate", t.gate), ("evidence", t.evidence), ("role", t.role)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ServiceError::Config(format!("threshold {name}={v} is outside [0, 1]")));
            }
        }
        if self.workers == 0 {
            return Err(ServiceError::Config("workers must be at least 1".into()));
        }
        if self.paths.synonyms.is_none() && self.paths.dictionary.is_none() {
            return Err(ServiceError::Config("paths.synonyms or paths.dictionary is required".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Model location: URLs are kept, paths resolved.
    pub fn model_location(&self, loc: &str) -> String {
        if loc.starts_with("http://") || loc.starts_with("https://") {
            loc.to_string()
        } else {
            self.resolve(loc).display().to_string()
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.resolve(&self.paths.store)
    }
}
