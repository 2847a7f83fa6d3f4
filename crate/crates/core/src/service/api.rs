//! Request handlers over a read-only store snapshot. The HTTP layer only translates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::config::ApiConfig;
use super::store::{ConceptIndex, ExtractionRecord, JournalEntry, Store};
use crate::abbrev::AbbrevPair;
use crate::corpus::{Document, PicoLabel, Sentence};
use crate::evidence::EvidenceSentence;
use crate::evidence_map::{
    aggregate, render_map, top_concepts, ConceptCount, LinkedTriplet, MapError, MapView, Query,
};
use crate::gate::GateDecision;
use crate::normalize::{DocumentConcepts, Ontology, SynonymDictionary};
use crate::pico::PicoSpan;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    BadRequest,
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub field_errors: Vec<FieldError>,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ApiError {
            code: code.to_string(),
            message: message.into(),
            field_errors: Vec::new(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        if self.code == "not_found" {
            ErrorKind::NotFound
        } else {
            ErrorKind::BadRequest
        }
    }
}

fn query_error(e: MapError, query: &Query) -> ApiError {
    match e {
        MapError::EmptyQuery => ApiError::new("empty_query", e.to_string()),
        MapError::UnknownConcepts(ref ids) => {
            let unknown: BTreeSet<&String> = ids.iter().collect();
            let mut err = ApiError::new("unknown_concept", e.to_string());
            for (label, f) in query.fields() {
                for c in &f.concepts {
                    if unknown.contains(c) {
                        err.field_errors.push(FieldError {
                            field: label.as_str().to_lowercase(),
                            message: format!("unknown concept id {c}"),
                        });
                    }
                }
            }
            err
        }
    }
}

/// Immutable view of the store that requests are answered from.
pub struct Snapshot {
    pub documents: BTreeMap<String, Document>,
    pub journal: BTreeMap<String, JournalEntry>,
    pub extractions: BTreeMap<String, ExtractionRecord>,
    pub index: ConceptIndex,
    pub ontology: Ontology,
    pub config: ApiConfig,
    /// (lowercased name, name, concept id, is preferred name)
    names: Vec<(String, String, String, bool)>,
}

impl Snapshot {
    pub fn new(store: &Store, ontology: Ontology, dictionary: &SynonymDictionary, config: ApiConfig) -> Self {
        let mut names = Vec::new();
        for c in ontology.concepts() {
            names.push((c.preferred_name.to_lowercase(), c.preferred_name.clone(), c.concept_id.clone(), true));
            let extra = dictionary.synonyms.get(&c.concept_id);
            for s in c.synonyms.iter().chain(extra.into_iter().flatten()) {
                if s != &c.preferred_name {
                    names.push((s.to_lowercase(), s.clone(), c.concept_id.clone(), false));
                }
            }
        }
        names.sort();
        names.dedup();
        Snapshot {
            documents: store.documents.clone(),
            journal: store.journal.clone(),
            extractions: store.extractions.clone(),
            index: store.index().clone(),
            ontology,
            config,
            names,
        }
    }

    fn records(&self, ids: &BTreeSet<String>) -> Vec<&ExtractionRecord> {
        ids.iter().filter_map(|id| self.extractions.get(id)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub concept_id: String,
    pub name: String,
    /// The preferred name or synonym the prefix matched.
    pub matched: String,
    pub via_synonym: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    #[serde(flatten)]
    pub query: Query,
    #[serde(default)]
    pub page: usize,
    #[serde(default)]
    pub page_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub doc_ids: Vec<String>,
    pub top_interventions: Vec<ConceptCount>,
    pub top_outcomes: Vec<ConceptCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentView {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub sentences: Vec<Sentence>,
    pub meta: BTreeMap<String, String>,
    pub journal: Option<JournalEntry>,
    pub gate: Option<GateDecision>,
    pub pico_spans: Vec<PicoSpan>,
    pub evidence: Vec<EvidenceSentence>,
    pub triplets: Vec<LinkedTriplet>,
    pub concepts: DocumentConcepts,
    pub concept_names: BTreeMap<String, String>,
    pub abbreviations: Vec<AbbrevPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub documents: usize,
    pub extracted: usize,
}

/// Request handlers with a swappable snapshot and a cache of serialized maps.
pub struct Api {
    snapshot: RwLock<Arc<Snapshot>>,
    map_cache: Mutex<HashMap<String, Arc<Vec<u8>>>>,
}

impl Api {
    pub fn new(snapshot: Snapshot) -> Self {
        Api {
            snapshot: RwLock::new(Arc::new(snapshot)),
            map_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Replace the snapshot; readers holding the old one finish against it.
    pub fn swap(&self, snapshot: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
        self.map_cache.lock().expect("cache lock").clear();
    }

    pub fn health(&self) -> Health {
        let s = self.snapshot();
        Health {
            status: "ok".into(),
            documents: s.documents.len(),
            extracted: s.extractions.values().filter(|r| r.gate.is_rct).count(),
        }
    }

    /// Case-insensitive prefix match over preferred names and synonyms, one suggestion
    /// per concept. Preferred-name hits rank first, then shorter names.
    pub fn autocomplete(&self, prefix: &str, role: Option<PicoLabel>) -> Result<Vec<Suggestion>, ApiError> {
        let p = prefix.trim().to_lowercase();
        if p.is_empty() {
            return Err(ApiError::new("prefix_required", "prefix required"));
        }
        let s = self.snapshot();
        let mut best: BTreeMap<&str, (bool, &str)> = BTreeMap::new();
        let start = s.names.partition_point(|n| n.0.as_str() < p.as_str());
        for (lower, name, id, preferred) in &s.names[start..] {
            if !lower.starts_with(&p) {
                break;
            }
            if let Some(label) = role {
                if s.index.docs_for(label, id, &s.ontology).is_empty() {
                    continue;
                }
            }
            let candidate = (!preferred, name.as_str());
            best.entry(id)
                .and_modify(|b| {
                    if (candidate.0, candidate.1.chars().count()) < (b.0, b.1.chars().count()) {
                        *b = candidate;
                    }
                })
                .or_insert(candidate);
        }
        let mut out: Vec<Suggestion> = best
            .into_iter()
            .map(|(id, (via_synonym, matched))| Suggestion {
                concept_id: id.to_string(),
                name: s.ontology.preferred_name(id).to_string(),
                matched: matched.to_string(),
                via_synonym,
            })
            .collect();
        out.sort_by(|a, b| {
            (a.via_synonym, a.name.chars().count(), &a.name, &a.concept_id).cmp(&(
                b.via_synonym,
                b.name.chars().count(),
                &b.name,
                &b.concept_id,
            ))
        });
        out.truncate(s.config.autocomplete_limit);
        Ok(out)
    }

    pub fn search(&self, req: &SearchRequest) -> Result<SearchResponse, ApiError> {
        let s = self.snapshot();
        let ids = s.index.filter(&req.query, &s.ontology).map_err(|e| query_error(e, &req.query))?;
        let page_size = req.page_size.unwrap_or(s.config.page_size);
        if page_size == 0 {
            let mut e = ApiError::new("bad_request", "invalid page size");
            e.field_errors.push(FieldError {
                field: "page_size".into(),
                message: "must be at least 1".into(),
            });
            return Err(e);
        }
        let records = s.records(&ids);
        let k = s.config.top_k;
        Ok(SearchResponse {
            total: ids.len(),
            page: req.page,
            page_size,
            doc_ids: ids.iter().skip(req.page.saturating_mul(page_size)).take(page_size).cloned().collect(),
            top_interventions: top_concepts(&records, PicoLabel::Intervention, k, &s.ontology),
            top_outcomes: top_concepts(&records, PicoLabel::Outcome, k, &s.ontology),
        })
    }

    pub fn map(&self, query: &Query) -> Result<MapView, ApiError> {
        let s = self.snapshot();
        let ids = s.index.filter(query, &s.ontology).map_err(|e| query_error(e, query))?;
        let map = aggregate(&s.records(&ids));
        Ok(render_map(&map, &s.ontology))
    }

    /// Serialized map, cached per normalized query until the next snapshot swap.
    pub fn map_json(&self, query: &Query) -> Result<Arc<Vec<u8>>, ApiError> {
        let key = serde_json::to_string(query).expect("query serializes");
        if let Some(hit) = self.map_cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let bytes = Arc::new(serde_json::to_vec(&self.map(query)?).expect("map serializes"));
        self.map_cache.lock().expect("cache lock").insert(key, bytes.clone());
        Ok(bytes)
    }

    pub fn document(&self, doc_id: &str) -> Result<DocumentView, ApiError> {
        let s = self.snapshot();
        let doc = s
            .documents
            .get(doc_id)
            .ok_or_else(|| ApiError::new("not_found", format!("no document {doc_id}")))?;
        let ex = s.extractions.get(doc_id);
        let concepts = ex.map(|r| r.concepts.clone()).unwrap_or_default();
        let concept_names = concepts
            .all()
            .into_iter()
            .chain(ex.into_iter().flat_map(|r| {
                r.triplets
                    .iter()
                    .flat_map(|t| t.intervention_concepts.iter().chain(&t.outcome_concepts).cloned())
            }))
            .map(|id| {
                let name = s.ontology.preferred_name(&id).to_string();
                (id, name)
            })
            .collect();
        Ok(DocumentView {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            abstract_text: doc.abstract_text.clone(),
            sentences: doc.sentences.clone(),
            meta: doc.meta.clone(),
            journal: s.journal.get(doc_id).cloned(),
            gate: ex.map(|r| r.gate.clone()),
            pico_spans: ex.map(|r| r.pico_spans.clone()).unwrap_or_default(),
            evidence: ex.map(|r| r.evidence.clone()).unwrap_or_default(),
            triplets: ex.map(|r| r.triplets.clone()).unwrap_or_default(),
            concepts,
            concept_names,
            abbreviations: ex.map(|r| r.abbreviations.clone()).unwrap_or_default(),
        })
    }
}
