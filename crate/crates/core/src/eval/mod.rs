//! Span, sentence, direction and concept metrics.

pub mod matching;
pub mod report;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Direction, TokenSpan};
use crate::normalize::{relaxed_equal, NormalizeError, Ontology};
use crate::text::scoring_tokens;

use matching::{brute_force_matching_size, max_matching};

/// Largest set size for which relaxed matching is cross-checked exhaustively.
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Ontology(#[from] NormalizeError),
    #[error("{doc_id}: matching found {found} pairs but the exhaustive maximum is {expected}")]
    MatchingDivergence {
        doc_id: String,
        found: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Prf {
    /// Scores from confusion counts; empty denominators give 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    /// Pool the counts of two results.
    pub fn merge(&self, other: &Prf) -> Prf {
        Prf::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

/// Mean precision, recall and F1 across rows, each averaged on its own.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MacroPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn macro_average(rows: &[Prf]) -> MacroPrf {
    if rows.is_empty() {
        return MacroPrf::default();
    }
    let n = rows.len() as f64;
    MacroPrf {
        precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
        f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
    }
}

fn covered(tokens: &[(usize, usize)], spans: &[TokenSpan]) -> Vec<bool> {
    tokens
        .iter()
        .map(|&(s, e)| spans.iter().any(|sp| sp.start < e && s < sp.end))
        .collect()
}

/// Token-level scores of one label in one document. A token counts as covered by a
/// span set when any span overlaps it by at least one character.
pub fn token_prf(pred: &[TokenSpan], gold: &[TokenSpan], text: &str) -> Prf {
    let tokens = scoring_tokens(text);
    let p = covered(&tokens, pred);
    let g = covered(&tokens, gold);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (a, b) in p.into_iter().zip(g) {
        match (a, b) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Prf::from_counts(tp, fp, fn_)
}

/// Entity-level scores: predicted and gold entities are paired one-to-one by character
/// overlap, maximizing the number of pairs.
pub fn entity_prf(pred: &[TokenSpan], gold: &[TokenSpan]) -> Prf {
    let adj: Vec<Vec<usize>> = pred
        .iter()
        .map(|p| (0..gold.len()).filter(|&j| p.overlaps(&gold[j])).collect())
        .collect();
    let tp = max_matching(pred.len(), gold.len(), &adj, &[])
        .iter()
        .flatten()
        .count();
    Prf::from_counts(tp, pred.len() - tp, gold.len() - tp)
}

pub fn sentence_prf(pred: &BTreeSet<usize>, gold: &BTreeSet<usize>) -> Prf {
    let tp = pred.intersection(gold).count();
    Prf::from_counts(tp, pred.len() - tp, gold.len() - tp)
}

/// One directional finding, from gold annotations or predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionItem {
    pub doc_id: String,
    pub intervention: TokenSpan,
    pub comparator: TokenSpan,
    pub outcome: TokenSpan,
    pub evidence_sentence_index: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Predictions carry directions for the gold prompts, paired by identical spans.
    GoldPrompts,
    /// Predicted triplets are paired with gold ones whose three spans all overlap.
    PredictedPrompts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionScores {
    pub mode: PromptMode,
    /// One row per class, in [`Direction::CLASSES`] order.
    pub classes: Vec<(Direction, Prf)>,
    pub matched: usize,
    pub unmatched_gold: usize,
    pub unmatched_pred: usize,
}

impl DirectionScores {
    pub fn class(&self, d: Direction) -> Option<&Prf> {
        self.classes.iter().find(|(c, _)| *c == d).map(|(_, p)| p)
    }
}

fn same_prompt(a: &DirectionItem, b: &DirectionItem) -> bool {
    let key = |s: &TokenSpan| (s.start, s.end);
    a.doc_id == b.doc_id
        && key(&a.intervention) == key(&b.intervention)
        && key(&a.comparator) == key(&b.comparator)
        && key(&a.outcome) == key(&b.outcome)
        && a.evidence_sentence_index == b.evidence_sentence_index
}

fn overlapping_prompt(a: &DirectionItem, b: &DirectionItem) -> bool {
    a.doc_id == b.doc_id
        && a.intervention.overlaps(&b.intervention)
        && a.comparator.overlaps(&b.comparator)
        && a.outcome.overlaps(&b.outcome)
}

/// Per-class scores of direction predictions. A matched pair with equal directions is a
/// true positive of that class; otherwise a false negative of the gold class and a false
/// positive of the predicted class. Unmatched gold items are false negatives. Unmatched
/// predictions are false positives in predicted-prompt mode and ignored in gold-prompt
/// mode. An `unknown` prediction never counts as a positive.
pub fn per_class_direction_scores(
    pred: &[DirectionItem],
    gold: &[DirectionItem],
    mode: PromptMode,
) -> DirectionScores {
    let edge = |p: &DirectionItem, g: &DirectionItem| match mode {
        PromptMode::GoldPrompts => same_prompt(p, g),
        PromptMode::PredictedPrompts => overlapping_prompt(p, g),
    };
    let adj: Vec<Vec<usize>> = pred
        .iter()
        .map(|p| (0..gold.len()).filter(|&j| edge(p, &gold[j])).collect())
        .collect();
    let m = max_matching(pred.len(), gold.len(), &adj, &[]);

    let slot = |d: Direction| Direction::CLASSES.iter().position(|c| *c == d);
    let mut counts = [(0usize, 0usize, 0usize); 3];
    let mut gold_matched = vec![false; gold.len()];
    let mut matched = 0;
    for (pi, gi) in m.iter().enumerate() {
        let Some(gi) = *gi else { continue };
        matched += 1;
        gold_matched[gi] = true;
        let (pd, gd) = (pred[pi].direction, gold[gi].direction);
        if pd == gd {
            if let Some(c) = slot(gd) {
                counts[c].0 += 1;
            }
        } else {
            if let Some(c) = slot(gd) {
                counts[c].2 += 1;
            }
            if let Some(c) = slot(pd) {
                counts[c].1 += 1;
            }
        }
    }
    for (gi, g) in gold.iter().enumerate() {
        if !gold_matched[gi] {
            if let Some(c) = slot(g.direction) {
                counts[c].2 += 1;
            }
        }
    }
    let unmatched_pred = m.iter().filter(|x| x.is_none()).count();
    if mode == PromptMode::PredictedPrompts {
        for (pi, p) in pred.iter().enumerate() {
            if m[pi].is_none() {
                if let Some(c) = slot(p.direction) {
                    counts[c].1 += 1;
                }
            }
        }
    }
    DirectionScores {
        mode,
        classes: Direction::CLASSES
            .iter()
            .zip(counts)
            .map(|(d, (tp, fp, fn_))| (*d, Prf::from_counts(tp, fp, fn_)))
            .collect(),
        matched,
        unmatched_gold: gold.len() - matched,
        unmatched_pred,
    }
}

/// Predicted and gold concept sets of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptDoc {
    pub doc_id: String,
    pub pred: BTreeSet<String>,
    pub gold: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyRow {
    pub concept_id: String,
    pub name: String,
    pub count: usize,
}

/// Unmatched concepts accumulated over documents, most frequent first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTally {
    /// Gold concepts that were missed.
    pub under_predicted: Vec<TallyRow>,
    /// Predicted concepts without a gold counterpart.
    pub over_predicted: Vec<TallyRow>,
}

impl ErrorTally {
    fn from_counts(
        under: BTreeMap<String, usize>,
        over: BTreeMap<String, usize>,
        ontology: &Ontology,
    ) -> Self {
        let rows = |m: BTreeMap<String, usize>| {
            let mut v: Vec<TallyRow> = m
                .into_iter()
                .map(|(id, count)| TallyRow {
                    name: ontology.preferred_name(&id).to_string(),
                    concept_id: id,
                    count,
                })
                .collect();
            v.sort_by(|a, b| {
                b.count
                    .cmp(&a.count)
                    .then_with(|| a.name.cmp(&b.name))
                    .then_with(|| a.concept_id.cmp(&b.concept_id))
            });
            v
        };
        ErrorTally {
            under_predicted: rows(under),
            over_predicted: rows(over),
        }
    }

    pub fn top(&self, k: usize) -> ErrorTally {
        ErrorTally {
            under_predicted: self.under_predicted.iter().take(k).cloned().collect(),
            over_predicted: self.over_predicted.iter().take(k).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEval {
    pub relaxed: bool,
    pub prf: Prf,
    pub tally: ErrorTally,
    pub avg_pred_count: f64,
    pub avg_gold_count: f64,
}

/// Pairs of one document: `(pred index, gold index)` in the sorted order of the sets.
/// Strict pairs require equal ids. Relaxed pairs may also join an immediate parent and
/// child; equal ids are seeded first, then augmenting paths maximize the pair count.
pub fn match_concepts_doc(
    doc: &ConceptDoc,
    ontology: &Ontology,
    relaxed: bool,
) -> Result<Vec<(usize, usize)>, EvalError> {
    let pred: Vec<&String> = doc.pred.iter().collect();
    let gold: Vec<&String> = doc.gold.iter().collect();
    let exact: Vec<(usize, usize)> = pred
        .iter()
        .enumerate()
        .filter_map(|(i, p)| gold.iter().position(|g| g == p).map(|j| (i, j)))
        .collect();
    if !relaxed {
        return Ok(exact);
    }
    let mut adj = vec![Vec::new(); pred.len()];
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gold.iter().enumerate() {
            if relaxed_equal(p, g, ontology)? {
                adj[i].push(j);
            }
        }
    }
    let m = max_matching(pred.len(), gold.len(), &adj, &exact);
    let pairs: Vec<(usize, usize)> = m
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    if pred.len() <= BRUTE_FORCE_LIMIT && gold.len() <= BRUTE_FORCE_LIMIT {
        let expected = brute_force_matching_size(pred.len(), gold.len(), &adj);
        if expected != pairs.len() {
            return Err(EvalError::MatchingDivergence {
                doc_id: doc.doc_id.clone(),
                found: pairs.len(),
                expected,
            });
        }
    }
    Ok(pairs)
}

/// Document-level concept scores pooled over documents, with error tallies and the
/// average number of predicted and gold concepts per document.
pub fn concept_eval(docs: &[ConceptDoc], ontology: &Ontology, relaxed: bool) -> Result<ConceptEval, EvalError> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut under: BTreeMap<String, usize> = BTreeMap::new();
    let mut over: BTreeMap<String, usize> = BTreeMap::new();
    for d in docs {
        let pairs = match_concepts_doc(d, ontology, relaxed)?;
        let mp: HashSet<usize> = pairs.iter().map(|p| p.0).collect();
        let mg: HashSet<usize> = pairs.iter().map(|p| p.1).collect();
        tp += pairs.len();
        for (i, id) in d.pred.iter().enumerate() {
            if !mp.contains(&i) {
                fp += 1;
                *over.entry(id.clone()).or_default() += 1;
            }
        }
        for (j, id) in d.gold.iter().enumerate() {
            if !mg.contains(&j) {
                fn_ += 1;
                *under.entry(id.clone()).or_default() += 1;
            }
        }
    }
    let n = docs.len();
    let avg = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    Ok(ConceptEval {
        relaxed,
        prf: Prf::from_counts(tp, fp, fn_),
        tally: ErrorTally::from_counts(under, over, ontology),
        avg_pred_count: avg(docs.iter().map(|d| d.pred.len()).sum()),
        avg_gold_count: avg(docs.iter().map(|d| d.gold.len()).sum()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_denominators() {
        let p = Prf::from_counts(0, 0, 3);
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let p = Prf::from_counts(0, 0, 0);
        assert_eq!(p.f1, 0.0);
    }

    #[test]
    fn macro_averages_each_column() {
        let m = macro_average(&[Prf::from_counts(1, 0, 1), Prf::from_counts(1, 1, 0)]);
        assert!((m.precision - 0.75).abs() < 1e-15);
        assert!((m.recall - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sentence_counts() {
        let p = sentence_prf(&BTreeSet::from([1, 2, 3]), &BTreeSet::from([2, 3, 4]));
        assert_eq!((p.tp, p.fp, p.fn_), (2, 1, 1));
    }
}
