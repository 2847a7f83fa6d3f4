//! Concept queries over normalized documents and the intervention x outcome map.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Direction, PicoLabel};
use crate::evidence::IcoTriplet;
use crate::normalize::{text_concepts, DocumentConcepts, Ontology, SynonymDictionary};
use crate::pico::PicoSpan;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("at least one filter required")]
    EmptyQuery,
    #[error("unknown concept ids: {}", .0.join(", "))]
    UnknownConcepts(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptFilter {
    pub concepts: Vec<String>,
    pub mode: CombineMode,
}

impl ConceptFilter {
    pub fn new(mode: CombineMode, concepts: &[&str]) -> Self {
        ConceptFilter {
            concepts: concepts.iter().map(|c| c.to_string()).collect(),
            mode,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population: Option<ConceptFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<ConceptFilter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ConceptFilter>,
}

impl Query {
    pub fn fields(&self) -> impl Iterator<Item = (PicoLabel, &ConceptFilter)> {
        [
            (PicoLabel::Population, &self.population),
            (PicoLabel::Intervention, &self.intervention),
            (PicoLabel::Outcome, &self.outcome),
        ]
        .into_iter()
        .filter_map(|(l, f)| f.as_ref().filter(|f| !f.concepts.is_empty()).map(|f| (l, f)))
    }

    pub fn with(mut self, label: PicoLabel, filter: ConceptFilter) -> Self {
        match label {
            PicoLabel::Population => self.population = Some(filter),
            PicoLabel::Intervention => self.intervention = Some(filter),
            PicoLabel::Outcome => self.outcome = Some(filter),
        }
        self
    }

    /// Rejects empty queries and lists every id missing from the ontology.
    pub fn validate(&self, ontology: &Ontology) -> Result<(), MapError> {
        if self.fields().next().is_none() {
            return Err(MapError::EmptyQuery);
        }
        let unknown: BTreeSet<String> = self
            .fields()
            .flat_map(|(_, f)| f.concepts.iter())
            .filter(|c| !ontology.contains(c))
            .cloned()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(MapError::UnknownConcepts(unknown.into_iter().collect()))
        }
    }
}

/// A triplet with the concepts its intervention and outcome link to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedTriplet {
    pub intervention: PicoSpan,
    pub comparator: PicoSpan,
    pub outcome: PicoSpan,
    pub evidence_sentence_index: usize,
    pub direction: Direction,
    #[serde(default)]
    pub direction_probs: Option<[f64; 3]>,
    pub intervention_concepts: BTreeSet<String>,
    pub outcome_concepts: BTreeSet<String>,
}

pub fn link_triplet(t: &IcoTriplet, dict: &SynonymDictionary) -> LinkedTriplet {
    LinkedTriplet {
        intervention: t.intervention.clone(),
        comparator: t.comparator.clone(),
        outcome: t.outcome.clone(),
        evidence_sentence_index: t.evidence_sentence_index,
        direction: t.direction,
        direction_probs: t.direction_probs,
        intervention_concepts: text_concepts(t.intervention.text(), dict),
        outcome_concepts: text_concepts(t.outcome.text(), dict),
    }
}

/// What the map needs from a stored document.
pub trait MapSource {
    fn doc_id(&self) -> &str;
    fn concepts(&self) -> &DocumentConcepts;
    fn triplets(&self) -> &[LinkedTriplet];
}

impl<T: MapSource> MapSource for &T {
    fn doc_id(&self) -> &str {
        (**self).doc_id()
    }
    fn concepts(&self) -> &DocumentConcepts {
        (**self).concepts()
    }
    fn triplets(&self) -> &[LinkedTriplet] {
        (**self).triplets()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub doc_id: String,
    pub concepts: DocumentConcepts,
    pub triplets: Vec<LinkedTriplet>,
}

impl MapSource for MapDocument {
    fn doc_id(&self) -> &str {
        &self.doc_id
    }
    fn concepts(&self) -> &DocumentConcepts {
        &self.concepts
    }
    fn triplets(&self) -> &[LinkedTriplet] {
        &self.triplets
    }
}

/// A listed concept is present when the set holds it or one of its immediate children.
pub fn concept_satisfied(concept: &str, set: &BTreeSet<String>, ontology: &Ontology) -> bool {
    set.contains(concept) || ontology.children(concept).any(|c| set.contains(c))
}

pub fn filter_matches(filter: &ConceptFilter, set: &BTreeSet<String>, ontology: &Ontology) -> bool {
    let mut hits = filter.concepts.iter().map(|c| concept_satisfied(c, set, ontology));
    match filter.mode {
        CombineMode::And => hits.all(|h| h),
        CombineMode::Or => hits.any(|h| h),
    }
}

pub fn document_matches(concepts: &DocumentConcepts, query: &Query, ontology: &Ontology) -> bool {
    query
        .fields()
        .all(|(label, f)| filter_matches(f, concepts.for_label(label), ontology))
}

pub fn filter_documents<D: MapSource>(
    docs: &[D],
    query: &Query,
    ontology: &Ontology,
) -> Result<BTreeSet<String>, MapError> {
    query.validate(ontology)?;
    Ok(docs
        .iter()
        .filter(|d| document_matches(d.concepts(), query, ontology))
        .map(|d| d.doc_id().to_string())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub doc_id: String,
    pub sentence_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub intervention_concept: String,
    pub outcome_concept: String,
    pub doc_ids: BTreeSet<String>,
    pub n_increased: usize,
    pub n_decreased: usize,
    pub n_no_difference: usize,
    pub evidence_refs: BTreeSet<EvidenceRef>,
}

impl MapCell {
    pub fn n_findings(&self) -> usize {
        self.n_increased + self.n_decreased + self.n_no_difference
    }

    fn merge(&mut self, other: MapCell) {
        self.doc_ids.extend(other.doc_ids);
        self.n_increased += other.n_increased;
        self.n_decreased += other.n_decreased;
        self.n_no_difference += other.n_no_difference;
        self.evidence_refs.extend(other.evidence_refs);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateDiagnostics {
    pub triplets_seen: usize,
    pub unlinked_intervention: usize,
    pub unlinked_outcome: usize,
    pub unknown_direction: usize,
    /// Contributions dropped as repeats of the same cell, sentence and outcome span.
    pub duplicates: usize,
    /// Concept-pair contributions counted in the cells.
    pub contributions: usize,
}

impl AggregateDiagnostics {
    fn merge(self, o: AggregateDiagnostics) -> AggregateDiagnostics {
        AggregateDiagnostics {
            triplets_seen: self.triplets_seen + o.triplets_seen,
            unlinked_intervention: self.unlinked_intervention + o.unlinked_intervention,
            unlinked_outcome: self.unlinked_outcome + o.unlinked_outcome,
            unknown_direction: self.unknown_direction + o.unknown_direction,
            duplicates: self.duplicates + o.duplicates,
            contributions: self.contributions + o.contributions,
        }
    }
}

/// In-memory map; serialize through [`render_map`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceMap {
    pub cells: BTreeMap<(String, String), MapCell>,
    pub diagnostics: AggregateDiagnostics,
}

impl EvidenceMap {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn merge(mut self, other: EvidenceMap) -> EvidenceMap {
        for (k, c) in other.cells {
            match self.cells.get_mut(&k) {
                Some(mine) => mine.merge(c),
                None => {
                    self.cells.insert(k, c);
                }
            }
        }
        self.diagnostics = self.diagnostics.merge(other.diagnostics);
        self
    }

    /// Concepts on one axis, by number of trials (descending) then id.
    pub fn axis(&self, label: PicoLabel) -> Vec<(String, usize)> {
        let mut docs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for ((i, o), c) in &self.cells {
            let key = if label == PicoLabel::Outcome { o } else { i };
            docs.entry(key).or_default().extend(c.doc_ids.iter().map(String::as_str));
        }
        let mut out: Vec<(String, usize)> = docs.into_iter().map(|(k, d)| (k.to_string(), d.len())).collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

fn aggregate_one<D: MapSource>(doc: &D) -> EvidenceMap {
    let mut map = EvidenceMap::default();
    let mut seen: BTreeSet<(&str, &str, usize, usize, usize)> = BTreeSet::new();
    let d = &mut map.diagnostics;
    for t in doc.triplets() {
        d.triplets_seen += 1;
        if t.intervention_concepts.is_empty() {
            d.unlinked_intervention += 1;
            continue;
        }
        if t.outcome_concepts.is_empty() {
            d.unlinked_outcome += 1;
            continue;
        }
        if t.direction == Direction::Unknown {
            d.unknown_direction += 1;
            continue;
        }
        for i in &t.intervention_concepts {
            for o in &t.outcome_concepts {
                let key = (
                    i.as_str(),
                    o.as_str(),
                    t.evidence_sentence_index,
                    t.outcome.span.start,
                    t.outcome.span.end,
                );
                if !seen.insert(key) {
                    d.duplicates += 1;
                    continue;
                }
                d.contributions += 1;
                let cell = map.cells.entry((i.clone(), o.clone())).or_insert_with(|| MapCell {
                    intervention_concept: i.clone(),
                    outcome_concept: o.clone(),
                    ..MapCell::default()
                });
                cell.doc_ids.insert(doc.doc_id().to_string());
                match t.direction {
                    Direction::Increased => cell.n_increased += 1,
                    Direction::Decreased => cell.n_decreased += 1,
                    Direction::NoDifference => cell.n_no_difference += 1,
                    Direction::Unknown => unreachable!(),
                }
                cell.evidence_refs.insert(EvidenceRef {
                    doc_id: doc.doc_id().to_string(),
                    sentence_index: t.evidence_sentence_index,
                });
            }
        }
    }
    map
}

/// Fold every triplet of `docs` into cells keyed by (intervention, outcome) concept.
/// Triplets with no linked intervention or outcome, or with an unknown direction,
/// are only counted in the diagnostics.
pub fn aggregate<D: MapSource + Sync>(docs: &[D]) -> EvidenceMap {
    docs.par_iter()
        .map(aggregate_one)
        .reduce(EvidenceMap::default, EvidenceMap::merge)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n_trials: usize,
    pub n_findings: usize,
    /// (increased - decreased) / findings, in [-1, 1].
    pub net_direction_score: f64,
}

pub fn summarize_cell(cell: &MapCell) -> CellSummary {
    let n = cell.n_findings();
    let score = if n == 0 {
        0.0
    } else {
        (cell.n_increased as f64 - cell.n_decreased as f64) / n as f64
    };
    CellSummary {
        n_trials: cell.doc_ids.len(),
        n_findings: n,
        net_direction_score: score,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptCount {
    pub concept_id: String,
    pub name: String,
    pub doc_count: usize,
}

/// Concepts of one role by number of documents mentioning them; ties by preferred name.
pub fn top_concepts<D: MapSource>(
    docs: &[D],
    role: PicoLabel,
    k: usize,
    ontology: &Ontology,
) -> Vec<ConceptCount> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in docs {
        for c in d.concepts().for_label(role) {
            *counts.entry(c.as_str()).or_default() += 1;
        }
    }
    let mut out: Vec<ConceptCount> = counts
        .into_iter()
        .map(|(id, n)| ConceptCount {
            concept_id: id.to_string(),
            name: ontology.preferred_name(id).to_string(),
            doc_count: n,
        })
        .collect();
    out.sort_by(|a, b| {
        b.doc_count
            .cmp(&a.doc_count)
            .then_with(|| a.name.cmp(&b.name))
            .then_with(|| a.concept_id.cmp(&b.concept_id))
    });
    out.truncate(k);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisEntry {
    pub concept_id: String,
    pub name: String,
    pub n_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellView {
    #[serde(flatten)]
    pub cell: MapCell,
    pub summary: CellSummary,
}

/// Serialized form of a map: named axes, cells with summaries, diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapView {
    pub interventions: Vec<AxisEntry>,
    pub outcomes: Vec<AxisEntry>,
    pub cells: Vec<CellView>,
    pub diagnostics: AggregateDiagnostics,
}

pub fn render_map(map: &EvidenceMap, ontology: &Ontology) -> MapView {
    let axis = |label| {
        map.axis(label)
            .into_iter()
            .map(|(id, n)| AxisEntry {
                name: ontology.preferred_name(&id).to_string(),
                concept_id: id,
                n_trials: n,
            })
            .collect()
    };
    MapView {
        interventions: axis(PicoLabel::Intervention),
        outcomes: axis(PicoLabel::Outcome),
        cells: map
            .cells
            .values()
            .map(|c| CellView {
                summary: summarize_cell(c),
                cell: c.clone(),
            })
            .collect(),
        diagnostics: map.diagnostics,
    }
}
