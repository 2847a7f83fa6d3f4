//! Evaluation reports over a gold corpus and a prediction file, laid out as the
//! usual result tables: PICO spans, evidence sentences, direction classes, concept
//! matching, and the most frequent concept errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    concept_eval, entity_prf, macro_average, per_class_direction_scores, sentence_prf, token_prf,
    ConceptDoc, DirectionItem, DirectionScores, ErrorTally, EvalError, MacroPrf, Prf, PromptMode,
};
use crate::corpus::{Direction, GoldDocument, PicoLabel, TokenSpan};
use crate::normalize::{normalize_document, DocumentConcepts, Ontology, SynonymDictionary};
use crate::pico::{group_entities, PicoSpan, SpanSource};

pub const TOP_ERRORS: usize = 10;

/// A span given either bare or wrapped in a tagged span object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpanRef {
    Nested { span: TokenSpan },
    Flat(TokenSpan),
}

impl SpanRef {
    pub fn span(&self) -> &TokenSpan {
        match self {
            SpanRef::Nested { span } | SpanRef::Flat(span) => span,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletPrediction {
    pub intervention: SpanRef,
    pub comparator: SpanRef,
    pub outcome: SpanRef,
    pub evidence_sentence_index: usize,
    pub direction: Direction,
}

/// One line of a prediction file. Extraction records written by the pipeline parse as
/// prediction records; every field except `doc_id` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    #[serde(default)]
    pub pico_spans: Vec<PicoSpan>,
    #[serde(default)]
    pub evidence_sentence_indices: BTreeSet<usize>,
    #[serde(default)]
    pub triplets: Vec<TripletPrediction>,
    #[serde(default)]
    pub concept_ids: Option<BTreeSet<String>>,
    #[serde(default)]
    pub concepts: Option<DocumentConcepts>,
}

pub fn parse_predictions(content: &str) -> Result<BTreeMap<String, PredictionRecord>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord =
            serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        out.insert(r.doc_id.clone(), r);
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<BTreeMap<String, PredictionRecord>, String> {
    let content = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_predictions(&content)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicoRow {
    pub label: PicoLabel,
    pub token: Prf,
    pub entity: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicoReport {
    pub rows: Vec<PicoRow>,
    /// Labels entering the macro average.
    pub macro_labels: Vec<PicoLabel>,
    pub macro_token: MacroPrf,
    pub macro_entity: MacroPrf,
}

/// Labels of the macro row by default: interventions (which include comparators) and outcomes.
pub const DEFAULT_MACRO_LABELS: [PicoLabel; 2] = [PicoLabel::Intervention, PicoLabel::Outcome];

pub fn pico_report(
    gold: &[GoldDocument],
    preds: &BTreeMap<String, PredictionRecord>,
    macro_labels: &[PicoLabel],
) -> PicoReport {
    let mut rows = Vec::new();
    for label in PicoLabel::ALL {
        let mut token = Prf::default();
        let mut entity = Prf::default();
        for g in gold {
            let text = &g.document.abstract_text;
            let gold_spans: Vec<TokenSpan> = g
                .gold
                .pico_spans
                .iter()
                .filter(|s| s.label == label)
                .map(|s| s.span.clone())
                .collect();
            let pred: Vec<PicoSpan> = preds
                .get(&g.document.doc_id)
                .map(|r| r.pico_spans.iter().filter(|s| s.label == label).cloned().collect())
                .unwrap_or_default();
            let pred_spans: Vec<TokenSpan> = pred.iter().map(|s| s.span.clone()).collect();
            token = token.merge(&token_prf(&pred_spans, &gold_spans, text));
            let pred_entities: Vec<TokenSpan> = group_entities(text, &pred)
                .into_iter()
                .map(|s| s.span)
                .collect();
            entity = entity.merge(&entity_prf(&pred_entities, &gold_spans));
        }
        rows.push(PicoRow {
            label,
            token,
            entity,
        });
    }
    let picked: Vec<&PicoRow> = rows.iter().filter(|r| macro_labels.contains(&r.label)).collect();
    PicoReport {
        macro_token: macro_average(&picked.iter().map(|r| r.token).collect::<Vec<_>>()),
        macro_entity: macro_average(&picked.iter().map(|r| r.entity).collect::<Vec<_>>()),
        macro_labels: macro_labels.to_vec(),
        rows,
    }
}

pub fn evidence_report(gold: &[GoldDocument], preds: &BTreeMap<String, PredictionRecord>) -> Prf {
    gold.iter().fold(Prf::default(), |acc, g| {
        let empty = BTreeSet::new();
        let pred = preds
            .get(&g.document.doc_id)
            .map_or(&empty, |r| &r.evidence_sentence_indices);
        acc.merge(&sentence_prf(pred, &g.gold.evidence_sentence_indices))
    })
}

pub fn gold_direction_items(gold: &[GoldDocument]) -> Vec<DirectionItem> {
    gold.iter()
        .flat_map(|g| {
            g.gold.triplets.iter().map(|t| DirectionItem {
                doc_id: g.document.doc_id.clone(),
                intervention: t.intervention.clone(),
                comparator: t.comparator.clone(),
                outcome: t.outcome.clone(),
                evidence_sentence_index: t.evidence_sentence_index,
                direction: t.direction,
            })
        })
        .collect()
}

pub fn predicted_direction_items(preds: &BTreeMap<String, PredictionRecord>) -> Vec<DirectionItem> {
    preds
        .values()
        .flat_map(|r| {
            r.triplets.iter().map(|t| DirectionItem {
                doc_id: r.doc_id.clone(),
                intervention: t.intervention.span().clone(),
                comparator: t.comparator.span().clone(),
                outcome: t.outcome.span().clone(),
                evidence_sentence_index: t.evidence_sentence_index,
                direction: t.direction,
            })
        })
        .collect()
}

pub fn direction_report(
    gold: &[GoldDocument],
    preds: &BTreeMap<String, PredictionRecord>,
    mode: PromptMode,
) -> DirectionScores {
    let ids: BTreeSet<&str> = gold.iter().map(|g| g.document.doc_id.as_str()).collect();
    let pred: Vec<DirectionItem> = predicted_direction_items(preds)
        .into_iter()
        .filter(|p| ids.contains(p.doc_id.as_str()))
        .collect();
    per_class_direction_scores(&pred, &gold_direction_items(gold), mode)
}

/// Where predicted concepts come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptSource {
    /// Concepts stored in the prediction file, or its spans linked with the dictionary.
    Predicted,
    /// Expert spans linked with the dictionary.
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRow {
    pub prf: Prf,
    pub avg_pred_count: f64,
    pub avg_gold_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptReport {
    pub span_source: ConceptSource,
    pub strict: ConceptRow,
    pub relaxed: Option<ConceptRow>,
    /// Most frequent errors under the loosest evaluated matching.
    pub top_errors: ErrorTally,
}

fn predicted_concepts(
    g: &GoldDocument,
    record: Option<&PredictionRecord>,
    dict: Option<&SynonymDictionary>,
    source: ConceptSource,
) -> Result<BTreeSet<String>, String> {
    match source {
        ConceptSource::Gold => {
            let dict = dict.ok_or("gold span source needs a dictionary")?;
            let spans: Vec<PicoSpan> = g
                .gold
                .pico_spans
                .iter()
                .map(|s| PicoSpan::new(s.label, s.span.clone(), 1.0, SpanSource::Gold))
                .collect();
            Ok(normalize_document(&spans, dict).all())
        }
        ConceptSource::Predicted => {
            let Some(r) = record else {
                return Ok(BTreeSet::new());
            };
            if let Some(ids) = &r.concept_ids {
                return Ok(ids.clone());
            }
            if let Some(c) = &r.concepts {
                return Ok(c.all());
            }
            match dict {
                Some(d) => Ok(normalize_document(&r.pico_spans, d).all()),
                None => Err(format!(
                    "{}: prediction has no concepts and no dictionary was given",
                    r.doc_id
                )),
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Input(String),
}

pub fn concept_report(
    gold: &[GoldDocument],
    preds: &BTreeMap<String, PredictionRecord>,
    ontology: &Ontology,
    dict: Option<&SynonymDictionary>,
    relaxed: bool,
    source: ConceptSource,
) -> Result<ConceptReport, ReportError> {
    let docs = gold
        .iter()
        .map(|g| {
            Ok(ConceptDoc {
                doc_id: g.document.doc_id.clone(),
                pred: predicted_concepts(g, preds.get(&g.document.doc_id), dict, source)
                    .map_err(ReportError::Input)?,
                gold: g.gold.concept_ids.clone(),
            })
        })
        .collect::<Result<Vec<_>, ReportError>>()?;
    let row = |e: &super::ConceptEval| ConceptRow {
        prf: e.prf,
        avg_pred_count: e.avg_pred_count,
        avg_gold_count: e.avg_gold_count,
    };
    let strict = concept_eval(&docs, ontology, false)?;
    let relaxed_eval = if relaxed {
        Some(concept_eval(&docs, ontology, true)?)
    } else {
        None
    };
    Ok(ConceptReport {
        span_source: source,
        strict: row(&strict),
        relaxed: relaxed_eval.as_ref().map(row),
        top_errors: relaxed_eval.as_ref().unwrap_or(&strict).tally.top(TOP_ERRORS),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pico: Option<PicoReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<DirectionScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concepts: Option<ConceptReport>,
}

fn prf_cells(p: &Prf) -> String {
    format!("{:.3} | {:.3} | {:.3}", p.f1, p.precision, p.recall)
}

fn macro_cells(p: &MacroPrf) -> String {
    format!("{:.3} | {:.3} | {:.3}", p.f1, p.precision, p.recall)
}

impl EvalReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        if let Some(p) = &self.pico {
            let labels: Vec<&str> = p.macro_labels.iter().map(|l| l.as_str()).collect();
            let _ = writeln!(s, "## PICO spans\n");
            let _ = writeln!(s, "| Level | Label | F1 | Precision | Recall |");
            let _ = writeln!(s, "|---|---|---|---|---|");
            let _ = writeln!(s, "| Token | macro ({}) | {} |", labels.join(", "), macro_cells(&p.macro_token));
            let _ = writeln!(s, "| Entity | macro ({}) | {} |", labels.join(", "), macro_cells(&p.macro_entity));
            for r in &p.rows {
                let _ = writeln!(s, "| Token | {} | {} |", r.label, prf_cells(&r.token));
            }
            for r in &p.rows {
                let _ = writeln!(s, "| Entity | {} | {} |", r.label, prf_cells(&r.entity));
            }
            s.push('\n');
        }
        if let Some(e) = &self.evidence {
            let _ = writeln!(s, "## Evidence sentences\n");
            let _ = writeln!(s, "| F1 | Precision | Recall |\n|---|---|---|");
            let _ = writeln!(s, "| {} |\n", prf_cells(e));
        }
        if let Some(d) = &self.direction {
            let mode = match d.mode {
                PromptMode::GoldPrompts => "gold prompts",
                PromptMode::PredictedPrompts => "predicted prompts",
            };
            let _ = writeln!(s, "## Direction ({mode})\n");
            let _ = writeln!(s, "| Class | F1 | Precision | Recall |\n|---|---|---|---|");
            for (class, p) in &d.classes {
                let _ = writeln!(s, "| {} | {} |", class, prf_cells(p));
            }
            s.push('\n');
        }
        if let Some(c) = &self.concepts {
            let _ = writeln!(s, "## Concepts\n");
            let _ = writeln!(s, "| Matching | F1 | Precision | Recall | Avg predicted | Avg gold |");
            let _ = writeln!(s, "|---|---|---|---|---|---|");
            let mut rows = vec![("strict", &c.strict)];
            if let Some(r) = &c.relaxed {
                rows.push(("relaxed", r));
            }
            for (name, r) in rows {
                let _ = writeln!(
                    s,
                    "| {name} | {} | {:.1} | {:.1} |",
                    prf_cells(&r.prf),
                    r.avg_pred_count,
                    r.avg_gold_count
                );
            }
            let _ = writeln!(s, "\n## Most frequent concept errors\n");
            let _ = writeln!(s, "| Rank | Under-predicted | Count | Over-predicted | Count |");
            let _ = writeln!(s, "|---|---|---|---|---|");
            let n = c.top_errors.under_predicted.len().max(c.top_errors.over_predicted.len());
            for i in 0..n {
                let cell = |v: &Vec<super::TallyRow>| {
                    v.get(i)
                        .map(|r| (r.name.clone(), r.count.to_string()))
                        .unwrap_or_default()
                };
                let (un, uc) = cell(&c.top_errors.under_predicted);
                let (on, oc) = cell(&c.top_errors.over_predicted);
                let _ = writeln!(s, "| {} | {un} | {uc} | {on} | {oc} |", i + 1);
            }
        }
        s
    }
}
