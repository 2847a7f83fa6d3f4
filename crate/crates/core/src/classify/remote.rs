//! HTTP client for externally hosted models.
//!
//! Wire protocol: `POST {url}/predict` with `{"task": ..., "segments": [...]}`,
//! answered by `{"probs": [...]}` in the class order of the model manifest.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Classifier, ClassifyError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteSpec {
    pub task: String,
    pub labels: Vec<String>,
    /// Base URL; `/predict` is appended.
    pub url: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_in_flight() -> usize {
    8
}

fn default_timeout() -> u64 {
    30_000
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictRequest {
    pub task: String,
    pub segments: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probs: Vec<f64>,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.cap {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

/// Raw protocol client. Used directly by the token tagger, whose responses are
/// per-token distributions rather than one distribution.
#[derive(Debug)]
pub struct RemoteClient {
    spec: RemoteSpec,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl RemoteClient {
    pub fn new(spec: RemoteSpec) -> Result<Self, ClassifyError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(spec.timeout_ms))
            .build()
            .map_err(|e| ClassifyError::Transport(e.to_string()))?;
        Ok(RemoteClient {
            in_flight: InFlight {
                cap: spec.max_in_flight.max(1),
                used: Mutex::new(0),
                freed: Condvar::new(),
            },
            spec,
            client,
        })
    }

    pub fn spec(&self) -> &RemoteSpec {
        &self.spec
    }

    pub fn post(&self, segments: &[String]) -> Result<Vec<f64>, ClassifyError> {
        let _permit = self.in_flight.acquire();
        let url = format!("{}/predict", self.spec.url.trim_end_matches('/'));
        let resp = self
            .client
            .post(&url)
            .json(&PredictRequest {
                task: self.spec.task.clone(),
                segments: segments.to_vec(),
            })
            .send()
            .map_err(|e| ClassifyError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClassifyError::Transport(format!("{url} returned {status}")));
        }
        let body: PredictResponse = resp
            .json()
            .map_err(|e| ClassifyError::BadResponse(e.to_string()))?;
        if body.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ClassifyError::BadResponse(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        Ok(body.probs)
    }
}

#[derive(Debug)]
pub struct RemoteClassifier {
    client: RemoteClient,
}

impl RemoteClassifier {
    pub fn new(spec: RemoteSpec) -> Result<Self, ClassifyError> {
        Ok(RemoteClassifier {
            client: RemoteClient::new(spec)?,
        })
    }

    pub fn spec(&self) -> &RemoteSpec {
        self.client.spec()
    }
}

impl Classifier for RemoteClassifier {
    fn task(&self) -> &str {
        &self.client.spec.task
    }

    fn labels(&self) -> &[String] {
        &self.client.spec.labels
    }

    fn predict(&self, segments: &[String]) -> Result<Vec<f64>, ClassifyError> {
        let probs = self.client.post(segments)?;
        let k = self.client.spec.labels.len();
        if probs.len() != k {
            return Err(ClassifyError::BadResponse(format!(
                "expected {k} probabilities, got {}",
                probs.len()
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ClassifyError::BadResponse(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(probs.into_iter().map(|p| p / sum).collect())
    }
}
