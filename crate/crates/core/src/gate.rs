//! RCT gate: only documents classified as trial reports go on to extraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{Classifier, ClassifyError};
use crate::corpus::Document;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub doc_id: String,
    pub probability: f64,
    pub is_rct: bool,
    pub threshold_used: f64,
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("gate classifier failed: {0}")]
    Classifier(#[from] ClassifyError),
}

pub fn check_threshold(threshold: f64) -> Result<(), GateError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(GateError::InvalidThreshold(threshold))
    }
}

/// Decision for a known probability. A probability equal to the threshold passes.
pub fn decide(doc_id: &str, probability: f64, threshold: f64) -> GateDecision {
    GateDecision {
        doc_id: doc_id.to_string(),
        probability,
        is_rct: probability >= threshold,
        threshold_used: threshold,
    }
}

/// Classify `[title, abstract]` with a binary model exposing an `rct` class.
pub fn gate(doc: &Document, clf: &dyn Classifier, threshold: f64) -> Result<GateDecision, GateError> {
    check_threshold(threshold)?;
    let rct = clf.label_index("rct")?;
    let probs = clf.predict(&[doc.title.clone(), doc.abstract_text.clone()])?;
    let p = probs.get(rct).copied().ok_or_else(|| {
        ClassifyError::BadResponse(format!("no probability for class index {rct}"))
    })?;
    Ok(decide(&doc.doc_id, p.clamp(0.0, 1.0), threshold))
}
