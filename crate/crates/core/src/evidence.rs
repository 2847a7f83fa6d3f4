//! Evidence sentences, outcome-anchored ICO assembly, directionality, and the
//! training-set builders for the evidence and relation models.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{Classifier, ClassifyError, LabeledExample};
use crate::corpus::{Direction, Document, GoldDocument, PicoLabel, Sentence, TokenSpan};
use crate::pico::PicoSpan;
use crate::text::{norm_key, word_tokens, CharIndex};

pub const DEFAULT_EVIDENCE_THRESHOLD: f64 = 0.3;
pub const DEFAULT_ROLE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_LENGTH_TOLERANCE: f64 = 0.2;
/// Leading sentences used as relation context.
pub const CONTEXT_SENTENCES: usize = 4;

/// Role classes in the order of [`crate::classify::Task::Role`].
pub const ROLE_INTERVENTION: usize = 0;
pub const ROLE_COMPARATOR: usize = 1;
pub const ROLE_NOT_INVOLVED: usize = 2;

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("outcome [{start}, {end}) is not inside evidence sentence {sentence}")]
    OutcomeOutsideEvidence {
        start: usize,
        end: usize,
        sentence: usize,
    },
    #[error("evidence sentence {0} does not exist")]
    BadSentence(usize),
    #[error(transparent)]
    Classifier(#[from] ClassifyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSentence {
    pub sentence_index: usize,
    pub confidence: f64,
}

/// Probability of the `evidence` class for every sentence; those at or above
/// `threshold` are returned in sentence order.
pub fn classify_evidence_sentences(
    doc: &Document,
    clf: &dyn Classifier,
    threshold: f64,
) -> Result<Vec<EvidenceSentence>, ClassifyError> {
    let k = clf.label_index("evidence")?;
    let mut out = Vec::new();
    for s in &doc.sentences {
        let p = clf.predict(std::slice::from_ref(&s.text))?[k];
        if p >= threshold {
            out.push(EvidenceSentence {
                sentence_index: s.index,
                confidence: p,
            });
        }
    }
    Ok(out)
}

/// Abstract text from the first sentence through sentence `CONTEXT_SENTENCES - 1`,
/// keeping the original spacing between them.
pub fn context_text(doc: &Document) -> String {
    let (Some(first), Some(last)) = (
        doc.sentences.first(),
        doc.sentences.get(CONTEXT_SENTENCES.min(doc.sentences.len()).saturating_sub(1)),
    ) else {
        return String::new();
    };
    CharIndex::new(&doc.abstract_text)
        .slice(&doc.abstract_text, first.start, last.end)
        .unwrap_or_default()
        .to_string()
}

/// Relation model input: `[treatment, evidence sentence, context]`.
pub fn relation_segments(treatment: &str, evidence: &Sentence, doc: &Document) -> Vec<String> {
    vec![treatment.to_string(), evidence.text.clone(), context_text(doc)]
}

pub fn build_relation_input(treatment: &PicoSpan, evidence: &Sentence, doc: &Document) -> Vec<String> {
    relation_segments(&treatment.span.text, evidence, doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleScore {
    pub treatment: PicoSpan,
    pub p_intervention: f64,
    pub p_comparator: f64,
    pub p_not_involved: f64,
}

/// Read a three-class distribution in a fixed class order from a classifier whose own
/// label order may differ.
fn ordered_probs(
    clf: &dyn Classifier,
    segments: &[String],
    classes: [&str; 3],
) -> Result<[f64; 3], ClassifyError> {
    let idx = [
        clf.label_index(classes[0])?,
        clf.label_index(classes[1])?,
        clf.label_index(classes[2])?,
    ];
    let p = clf.predict(segments)?;
    let get = |i: usize| {
        p.get(i)
            .copied()
            .ok_or_else(|| ClassifyError::BadResponse(format!("missing class index {i}")))
    };
    Ok([get(idx[0])?, get(idx[1])?, get(idx[2])?])
}

/// Keep the first span of each normalized treatment text.
pub fn dedup_candidates(candidates: &[PicoSpan]) -> Vec<PicoSpan> {
    let mut seen = HashSet::new();
    candidates
        .iter()
        .filter(|c| seen.insert(norm_key(&c.span.text)))
        .cloned()
        .collect()
}

/// Score each distinct candidate treatment for its role in the evidence sentence,
/// sorted by intervention probability (stable for equal scores).
pub fn rank_treatment_roles(
    outcome: &PicoSpan,
    evidence: &Sentence,
    candidates: &[PicoSpan],
    doc: &Document,
    clf: &dyn Classifier,
) -> Result<Vec<RoleScore>, EvidenceError> {
    if !outcome.span.within(evidence.start, evidence.end) {
        return Err(EvidenceError::OutcomeOutsideEvidence {
            start: outcome.span.start,
            end: outcome.span.end,
            sentence: evidence.index,
        });
    }
    let mut out = Vec::new();
    for c in dedup_candidates(candidates) {
        let p = ordered_probs(
            clf,
            &build_relation_input(&c, evidence, doc),
            ["intervention", "comparator", "not_involved"],
        )?;
        out.push(RoleScore {
            treatment: c,
            p_intervention: p[0],
            p_comparator: p[1],
            p_not_involved: p[2],
        });
    }
    out.sort_by(|a, b| b.p_intervention.total_cmp(&a.p_intervention));
    Ok(out)
}

/// Argmax over [`Direction::CLASSES`]. Any tie for the maximum resolves to no difference.
pub fn direction_from_probs(p: &[f64; 3]) -> Direction {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..3).filter(|&i| p[i] == max).collect();
    match winners.as_slice() {
        [single] => Direction::CLASSES[*single],
        _ => Direction::NoDifference,
    }
}

/// Direction of an outcome from `[outcome, evidence sentence]`. The treatments are
/// deliberately not part of the input.
pub fn classify_directionality(
    outcome: &PicoSpan,
    evidence: &Sentence,
    clf: &dyn Classifier,
) -> Result<(Direction, [f64; 3]), ClassifyError> {
    let p = ordered_probs(
        clf,
        &[outcome.span.text.clone(), evidence.text.clone()],
        ["increased", "decreased", "no_difference"],
    )?;
    Ok((direction_from_probs(&p), p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcoTriplet {
    pub intervention: PicoSpan,
    pub comparator: PicoSpan,
    pub outcome: PicoSpan,
    pub evidence_sentence_index: usize,
    pub direction: Direction,
    /// In [`Direction::CLASSES`] order; absent when the direction model failed.
    pub direction_probs: Option<[f64; 3]>,
    pub role_scores: Vec<RoleScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    NoCandidates,
    /// Best intervention probability fell short of the threshold.
    NoIntervention { best: f64 },
    /// No distinct comparator reached the threshold.
    NoComparator { best: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    Skipped {
        sentence_index: usize,
        outcome: TokenSpan,
        reason: SkipReason,
    },
    DirectionFailed {
        sentence_index: usize,
        outcome: TokenSpan,
        error: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assembly {
    pub triplets: Vec<IcoTriplet>,
    pub diagnostics: Vec<Diagnostic>,
}

/// For each outcome inside each evidence sentence, choose the most probable intervention
/// and a distinct comparator, both at or above `role_threshold`, and attach a direction.
/// Outcomes without both roles emit nothing and leave a diagnostic. A failing direction
/// model yields [`Direction::Unknown`]; a failing role model fails the document.
pub fn assemble_ico(
    doc: &Document,
    spans: &[PicoSpan],
    evidence: &[EvidenceSentence],
    role_clf: &dyn Classifier,
    direction_clf: &dyn Classifier,
    role_threshold: f64,
) -> Result<Assembly, EvidenceError> {
    let candidates: Vec<PicoSpan> = spans
        .iter()
        .filter(|s| s.label == PicoLabel::Intervention)
        .cloned()
        .collect();
    let mut outcomes: Vec<&PicoSpan> = spans
        .iter()
        .filter(|s| s.label == PicoLabel::Outcome)
        .collect();
    outcomes.sort_by_key(|s| (s.span.start, s.span.end));
    let mut indices: Vec<usize> = evidence.iter().map(|e| e.sentence_index).collect();
    indices.sort_unstable();
    indices.dedup();

    let mut out = Assembly::default();
    for si in indices {
        let sentence = doc.sentences.get(si).ok_or(EvidenceError::BadSentence(si))?;
        for outcome in outcomes
            .iter()
            .filter(|o| o.span.within(sentence.start, sentence.end))
        {
            let skip = |reason| Diagnostic::Skipped {
                sentence_index: si,
                outcome: outcome.span.clone(),
                reason,
            };
            let ranked = rank_treatment_roles(outcome, sentence, &candidates, doc, role_clf)?;
            let Some(top) = ranked.first() else {
                out.diagnostics.push(skip(SkipReason::NoCandidates));
                continue;
            };
            if top.p_intervention < role_threshold {
                out.diagnostics.push(skip(SkipReason::NoIntervention {
                    best: top.p_intervention,
                }));
                continue;
            }
            let intervention = top.treatment.clone();
            let i_key = norm_key(&intervention.span.text);
            let mut by_comparator: Vec<&RoleScore> = ranked
                .iter()
                .filter(|r| norm_key(&r.treatment.span.text) != i_key)
                .collect();
            by_comparator.sort_by(|a, b| b.p_comparator.total_cmp(&a.p_comparator));
            let comparator = match by_comparator.first() {
                Some(r) if r.p_comparator >= role_threshold => r.treatment.clone(),
                best => {
                    out.diagnostics.push(skip(SkipReason::NoComparator {
                        best: best.map(|r| r.p_comparator),
                    }));
                    continue;
                }
            };
            let (direction, direction_probs) =
                match classify_directionality(outcome, sentence, direction_clf) {
                    Ok((d, p)) => (d, Some(p)),
                    Err(e) => {
                        out.diagnostics.push(Diagnostic::DirectionFailed {
                            sentence_index: si,
                            outcome: outcome.span.clone(),
                            error: e.to_string(),
                        });
                        (Direction::Unknown, None)
                    }
                };
            out.triplets.push(IcoTriplet {
                intervention,
                comparator,
                outcome: (*outcome).clone(),
                evidence_sentence_index: si,
                direction,
                direction_probs,
                role_scores: ranked,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training sets

/// Per-document generator, so adding a document never changes another's sample.
fn doc_rng(seed: u64, doc_id: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in doc_id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSample {
    pub doc_id: String,
    pub sentence_index: usize,
    pub evidence: bool,
    /// For negatives: the positive it was length-matched to.
    pub matched_to: Option<usize>,
    /// No sentence was within tolerance; the nearest length was used instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingWarning {
    /// Every sentence of the document is evidence; no negatives drawn.
    AllEvidence { doc_id: String },
    /// Fewer non-evidence sentences than positives.
    TooFewNegatives {
        doc_id: String,
        positives: usize,
        negatives: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceTrainingSet {
    pub samples: Vec<EvidenceSample>,
    pub examples: Vec<LabeledExample>,
    pub warnings: Vec<SamplingWarning>,
}

/// Every gold evidence sentence as a positive and, per positive, one distinct
/// non-evidence sentence whose length is within `tolerance` (relative) of it. When none
/// qualifies the nearest-length remaining sentence is used and flagged.
pub fn build_evidence_training_set(
    gold: &[GoldDocument],
    tolerance: f64,
    seed: u64,
) -> EvidenceTrainingSet {
    let mut out = EvidenceTrainingSet::default();
    for g in gold {
        let doc = &g.document;
        let mut rng = doc_rng(seed, &doc.doc_id);
        let len = |i: usize| doc.sentences[i].text.chars().count() as f64;
        let positives: Vec<usize> = g
            .gold
            .evidence_sentence_indices
            .iter()
            .copied()
            .filter(|&i| i < doc.sentences.len())
            .collect();
        let mut unused: BTreeSet<usize> = (0..doc.sentences.len())
            .filter(|i| !g.gold.evidence_sentence_indices.contains(i))
            .collect();
        if positives.is_empty() {
            continue;
        }
        if unused.is_empty() {
            out.warnings.push(SamplingWarning::AllEvidence {
                doc_id: doc.doc_id.clone(),
            });
        } else if unused.len() < positives.len() {
            out.warnings.push(SamplingWarning::TooFewNegatives {
                doc_id: doc.doc_id.clone(),
                positives: positives.len(),
                negatives: unused.len(),
            });
        }
        for &p in &positives {
            out.samples.push(EvidenceSample {
                doc_id: doc.doc_id.clone(),
                sentence_index: p,
                evidence: true,
                matched_to: None,
                fallback: false,
            });
            if unused.is_empty() {
                continue;
            }
            let target = len(p);
            let within: Vec<usize> = unused
                .iter()
                .copied()
                .filter(|&i| (len(i) - target).abs() <= tolerance * target)
                .collect();
            let (pick, fallback) = match within.choose(&mut rng) {
                Some(&i) => (i, false),
                None => {
                    let nearest = unused
                        .iter()
                        .copied()
                        .min_by(|&a, &b| {
                            (len(a) - target).abs().total_cmp(&(len(b) - target).abs())
                        })
                        .expect("unused is non-empty");
                    (nearest, true)
                }
            };
            unused.remove(&pick);
            out.samples.push(EvidenceSample {
                doc_id: doc.doc_id.clone(),
                sentence_index: pick,
                evidence: false,
                matched_to: Some(p),
                fallback,
            });
        }
    }
    out.examples = out
        .samples
        .iter()
        .map(|s| {
            let doc = &gold
                .iter()
                .find(|g| g.document.doc_id == s.doc_id)
                .expect("sample from known document")
                .document;
            LabeledExample::new(
                vec![doc.sentences[s.sentence_index].text.clone()],
                usize::from(s.evidence),
            )
        })
        .collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// An outcome presented as the treatment.
    OutcomeAsTreatment,
    /// Two distinct treatments joined into one phrase.
    Compound,
    /// A span that is not a PICO element.
    Spurious,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] = [
        CorruptionKind::OutcomeAsTreatment,
        CorruptionKind::Compound,
        CorruptionKind::Spurious,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeConfig {
    pub seed: u64,
    /// Upper bound on negatives drawn from one document.
    pub per_document: usize,
    /// Relative share of each generator, in [`CorruptionKind::ALL`] order.
    pub shares: [f64; 3],
}

impl Default for NegativeConfig {
    fn default() -> Self {
        NegativeConfig {
            seed: 17,
            per_document: 3,
            shares: [1.0, 1.0, 1.0],
        }
    }
}

impl NegativeConfig {
    /// Per-document quota of each generator. Quotas are split by largest remainder.
    pub fn quotas(&self) -> [usize; 3] {
        let total: f64 = self.shares.iter().map(|s| s.max(0.0)).sum();
        if total <= 0.0 {
            return [0; 3];
        }
        let exact: Vec<f64> = self
            .shares
            .iter()
            .map(|s| s.max(0.0) / total * self.per_document as f64)
            .collect();
        let mut q = [0usize; 3];
        for i in 0..3 {
            q[i] = exact[i].floor() as usize;
        }
        let mut rest = self.per_document - q.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).filter(|&i| self.shares[i] > 0.0).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        for i in order.into_iter().cycle() {
            if rest == 0 {
                break;
            }
            q[i] += 1;
            rest -= 1;
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationNegative {
    pub doc_id: String,
    pub kind: CorruptionKind,
    pub treatment: String,
    pub evidence_sentence_index: usize,
    pub example: LabeledExample,
}

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "and", "or", "the", "in", "of", "for", "was", "were", "is", "are", "at", "by",
    "with", "to", "from", "on", "than", "vs", "versus", "between", "we", "this", "these", "no",
    "not", "both", "also", "all", "had", "has", "be", "been",
];

/// Word runs of 1 to 3 alphabetic non-function words that lie in one sentence and
/// overlap no gold span.
fn spurious_candidates(g: &GoldDocument) -> Vec<(usize, TokenSpan)> {
    let doc = &g.document;
    let index = CharIndex::new(&doc.abstract_text);
    let chars: Vec<char> = doc.abstract_text.chars().collect();
    let gold: Vec<&TokenSpan> = g
        .gold
        .pico_spans
        .iter()
        .map(|s| &s.span)
        .chain(g.gold.triplets.iter().flat_map(|t| [&t.intervention, &t.comparator, &t.outcome]))
        .collect();
    let mut out = Vec::new();
    for s in &doc.sentences {
        let text = &s.text;
        let toks: Vec<_> = word_tokens(text)
            .into_iter()
            .map(|t| (t.start + s.start, t.end + s.start, t.norm))
            .collect();
        for i in 0..toks.len() {
            for n in 1..=3 {
                let Some(run) = toks.get(i..i + n) else { break };
                let ok = run.iter().all(|(_, _, w)| {
                    w.chars().all(char::is_alphabetic) && !FUNCTION_WORDS.contains(&w.as_str())
                }) && run
                    .windows(2)
                    .all(|w| chars[w[0].1..w[1].0].iter().all(|c| *c == ' '));
                if !ok {
                    break;
                }
                let span = TokenSpan {
                    start: run[0].0,
                    end: run[n - 1].1,
                    text: index
                        .slice(&doc.abstract_text, run[0].0, run[n - 1].1)
                        .unwrap_or_default()
                        .to_string(),
                };
                if gold.iter().all(|gs| !gs.overlaps(&span)) {
                    out.push((s.index, span));
                }
            }
        }
    }
    out
}

/// `not_involved` examples from three corruption generators. Documents that lack the
/// material for a generator contribute nothing to it.
pub fn generate_relation_negatives(gold: &[GoldDocument], cfg: &NegativeConfig) -> Vec<RelationNegative> {
    let quotas = cfg.quotas();
    let mut out = Vec::new();
    for g in gold {
        let doc = &g.document;
        if g.gold.triplets.is_empty() {
            continue;
        }
        let mut rng = doc_rng(cfg.seed, &doc.doc_id);
        let mut emit = |kind, treatment: String, si: usize| {
            let example = LabeledExample::new(
                relation_segments(&treatment, &doc.sentences[si], doc),
                ROLE_NOT_INVOLVED,
            );
            out.push(RelationNegative {
                doc_id: doc.doc_id.clone(),
                kind,
                treatment,
                evidence_sentence_index: si,
                example,
            });
        };

        // outcome as treatment
        let mut triplets: Vec<_> = g.gold.triplets.iter().collect();
        triplets.shuffle(&mut rng);
        for t in triplets.iter().take(quotas[0]) {
            emit(
                CorruptionKind::OutcomeAsTreatment,
                t.outcome.text.clone(),
                t.evidence_sentence_index,
            );
        }

        // compound of two distinct treatments
        let mut treatments: Vec<String> = Vec::new();
        let mut keys = HashSet::new();
        for t in &g.gold.triplets {
            for s in [&t.intervention, &t.comparator] {
                if keys.insert(norm_key(&s.text)) {
                    treatments.push(s.text.clone());
                }
            }
        }
        if treatments.len() >= 2 {
            let mut pairs = Vec::new();
            for a in 0..treatments.len() {
                for b in a + 1..treatments.len() {
                    pairs.push((a, b));
                }
            }
            pairs.shuffle(&mut rng);
            for &(a, b) in pairs.iter().take(quotas[1]) {
                let si = g.gold.triplets[rng.random_range(0..g.gold.triplets.len())]
                    .evidence_sentence_index;
                emit(
                    CorruptionKind::Compound,
                    format!("{} and {}", treatments[a], treatments[b]),
                    si,
                );
            }
        }

        // spurious span
        let mut pool = spurious_candidates(g);
        pool.shuffle(&mut rng);
        for (_, span) in pool.into_iter().take(quotas[2]) {
            let si = g.gold.triplets[rng.random_range(0..g.gold.triplets.len())]
                .evidence_sentence_index;
            emit(CorruptionKind::Spurious, span.text, si);
        }
    }
    out
}

/// Gold interventions and comparators with their evidence sentences.
pub fn relation_positives(gold: &[GoldDocument]) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for g in gold {
        for t in &g.gold.triplets {
            let s = &g.document.sentences[t.evidence_sentence_index];
            out.push(LabeledExample::new(
                relation_segments(&t.intervention.text, s, &g.document),
                ROLE_INTERVENTION,
            ));
            out.push(LabeledExample::new(
                relation_segments(&t.comparator.text, s, &g.document),
                ROLE_COMPARATOR,
            ));
        }
    }
    out
}

/// `[outcome, evidence]` examples labelled with the gold direction.
pub fn direction_examples(gold: &[GoldDocument]) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for g in gold {
        for t in &g.gold.triplets {
            let Some(class) = Direction::CLASSES.iter().position(|d| *d == t.direction) else {
                continue;
            };
            out.push(LabeledExample::new(
                vec![
                    t.outcome.text.clone(),
                    g.document.sentences[t.evidence_sentence_index].text.clone(),
                ],
                class,
            ));
        }
    }
    out
}
