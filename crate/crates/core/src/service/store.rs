//! On-disk store: documents, extraction records and the ingestion journal, one JSON
//! line per document, each table sorted by id and replaced atomically on commit.
//! The concept index is kept in memory and rebuilt from the extraction table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ServiceError;
use crate::abbrev::AbbrevPair;
use crate::corpus::{CorpusRecord, Document, PicoLabel};
use crate::evidence::{Diagnostic, EvidenceSentence};
use crate::evidence_map::{CombineMode, LinkedTriplet, MapError, MapSource, Query};
use crate::gate::GateDecision;
use crate::normalize::{DocumentConcepts, Ontology};
use crate::pico::PicoSpan;

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const EXTRACTIONS_FILE: &str = "extractions.jsonl";
pub const JOURNAL_FILE: &str = "journal.jsonl";

/// Furthest pipeline stage a document reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingested,
    Gated,
    Extracted,
    Normalized,
    Indexed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    Indexed,
    GatedOut,
    /// Retried on the next ingest.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub doc_id: String,
    pub content_hash: String,
    pub pipeline_version: String,
    pub stage: Stage,
    pub disposition: Disposition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub updated_at: String,
}

/// Everything extracted from one document, in original abstract coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub doc_id: String,
    pub pipeline_version: String,
    pub content_hash: String,
    pub gate: GateDecision,
    pub pico_spans: Vec<PicoSpan>,
    pub evidence: Vec<EvidenceSentence>,
    pub evidence_sentence_indices: BTreeSet<usize>,
    pub triplets: Vec<LinkedTriplet>,
    pub concepts: DocumentConcepts,
    pub abbreviations: Vec<AbbrevPair>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ExtractionRecord {
    /// Record for a document that did not pass the gate.
    pub fn gated_out(doc_id: &str, version: &str, hash: &str, gate: GateDecision) -> Self {
        ExtractionRecord {
            doc_id: doc_id.to_string(),
            pipeline_version: version.to_string(),
            content_hash: hash.to_string(),
            gate,
            pico_spans: Vec::new(),
            evidence: Vec::new(),
            evidence_sentence_indices: BTreeSet::new(),
            triplets: Vec::new(),
            concepts: DocumentConcepts::default(),
            abbreviations: Vec::new(),
            diagnostics: Vec::new(),
        }
    }
}

impl MapSource for ExtractionRecord {
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

/// SHA-256 over the canonical JSON of the feed record.
pub fn content_hash(doc: &Document) -> String {
    let json = serde_json::to_vec(&doc.to_record()).expect("record serializes");
    format!("{:x}", Sha256::digest(&json))
}

/// concept id -> documents, per PICO role.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptIndex {
    roles: [BTreeMap<String, BTreeSet<String>>; 3],
}

fn role_slot(label: PicoLabel) -> usize {
    match label {
        PicoLabel::Population => 0,
        PicoLabel::Intervention => 1,
        PicoLabel::Outcome => 2,
    }
}

impl ConceptIndex {
    pub fn build<'a>(records: impl IntoIterator<Item = &'a ExtractionRecord>) -> Self {
        let mut idx = ConceptIndex::default();
        for r in records {
            for label in PicoLabel::ALL {
                for c in r.concepts.for_label(label) {
                    idx.roles[role_slot(label)]
                        .entry(c.clone())
                        .or_default()
                        .insert(r.doc_id.clone());
                }
            }
        }
        idx
    }

    pub fn role(&self, label: PicoLabel) -> &BTreeMap<String, BTreeSet<String>> {
        &self.roles[role_slot(label)]
    }

    /// Documents holding `concept` or one of its immediate children in `label`.
    pub fn docs_for(&self, label: PicoLabel, concept: &str, ontology: &Ontology) -> BTreeSet<String> {
        let role = self.role(label);
        std::iter::once(concept)
            .chain(ontology.children(concept).map(String::as_str))
            .filter_map(|c| role.get(c))
            .flatten()
            .cloned()
            .collect()
    }

    pub fn filter(&self, query: &Query, ontology: &Ontology) -> Result<BTreeSet<String>, MapError> {
        query.validate(ontology)?;
        let mut result: Option<BTreeSet<String>> = None;
        for (label, f) in query.fields() {
            let mut sets = f.concepts.iter().map(|c| self.docs_for(label, c, ontology));
            let first = sets.next().unwrap_or_default();
            let field = sets.fold(first, |acc, s| match f.mode {
                CombineMode::And => acc.intersection(&s).cloned().collect(),
                CombineMode::Or => acc.union(&s).cloned().collect(),
            });
            result = Some(match result {
                None => field,
                Some(r) => r.intersection(&field).cloned().collect(),
            });
        }
        Ok(result.unwrap_or_default())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Store {
    dir: PathBuf,
    pub documents: BTreeMap<String, Document>,
    pub extractions: BTreeMap<String, ExtractionRecord>,
    pub journal: BTreeMap<String, JournalEntry>,
    index: ConceptIndex,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let content = match fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ServiceError::io(path, e)),
    };
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ServiceError::StoreRecord {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Write to a sibling temporary file, then rename over the target.
fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a T>,
) -> Result<(), ServiceError> {
    let tmp = path.with_extension("jsonl.tmp");
    let io = |e| ServiceError::io(&tmp, e);
    let mut f = std::io::BufWriter::new(fs::File::create(&tmp).map_err(io)?);
    for r in rows {
        serde_json::to_writer(&mut f, r).map_err(|e| ServiceError::io(&tmp, e.into()))?;
        f.write_all(b"\n").map_err(io)?;
    }
    let f = f.into_inner().map_err(|e| io(e.into_error()))?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| ServiceError::io(path, e))
}

impl Store {
    /// Open the store in `dir`, creating the directory when missing.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
        let documents = read_jsonl::<CorpusRecord>(&dir.join(DOCUMENTS_FILE))?
            .into_iter()
            .map(|r| (r.doc_id.clone(), Document::from(r)))
            .collect();
        let extractions: BTreeMap<String, ExtractionRecord> =
            read_jsonl::<ExtractionRecord>(&dir.join(EXTRACTIONS_FILE))?
                .into_iter()
                .map(|r| (r.doc_id.clone(), r))
                .collect();
        let journal = read_jsonl::<JournalEntry>(&dir.join(JOURNAL_FILE))?
            .into_iter()
            .map(|r| (r.doc_id.clone(), r))
            .collect();
        let index = ConceptIndex::build(extractions.values());
        Ok(Store {
            dir: dir.to_path_buf(),
            documents,
            extractions,
            journal,
            index,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn index(&self) -> &ConceptIndex {
        &self.index
    }

    /// Whether a document must go through the pipeline: new, changed, extracted by
    /// another pipeline version, or failed before.
    pub fn needs_processing(&self, doc_id: &str, hash: &str, version: &str) -> bool {
        match self.journal.get(doc_id) {
            None => true,
            Some(j) => {
                j.content_hash != hash || j.pipeline_version != version || j.disposition == Disposition::Failed
            }
        }
    }

    /// Record the result for one document. Within one version and content the stage
    /// never moves backwards.
    pub fn put(&mut self, doc: Document, mut entry: JournalEntry, extraction: Option<ExtractionRecord>) {
        if let Some(old) = self.journal.get(&entry.doc_id) {
            if old.pipeline_version == entry.pipeline_version && old.content_hash == entry.content_hash {
                entry.stage = entry.stage.max(old.stage);
            }
        }
        match extraction {
            Some(r) => {
                self.extractions.insert(r.doc_id.clone(), r);
            }
            None => {
                self.extractions.remove(&entry.doc_id);
            }
        }
        self.documents.insert(doc.doc_id.clone(), doc);
        self.journal.insert(entry.doc_id.clone(), entry);
    }

    /// Rebuild the index from the extraction table.
    pub fn reindex(&mut self) {
        self.index = ConceptIndex::build(self.extractions.values());
    }

    /// Compare the held index with a fresh rebuild and cross-check the tables.
    pub fn check_consistency(&self) -> Result<(), ServiceError> {
        let mut problems = Vec::new();
        if ConceptIndex::build(self.extractions.values()) != self.index {
            problems.push("index differs from a rebuild".to_string());
        }
        for label in PicoLabel::ALL {
            for (c, docs) in self.index.role(label) {
                for d in docs {
                    let ok = self
                        .extractions
                        .get(d)
                        .is_some_and(|r| r.concepts.for_label(label).contains(c));
                    if !ok {
                        problems.push(format!("{label} {c} -> {d} has no backing extraction"));
                    }
                }
            }
        }
        for (id, r) in &self.extractions {
            if !self.documents.contains_key(id) {
                problems.push(format!("extraction {id} has no document"));
            }
            match self.journal.get(id) {
                Some(j) if j.disposition != Disposition::Failed && j.pipeline_version == r.pipeline_version => {}
                _ => problems.push(format!("extraction {id} has no matching journal entry")),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ServiceError::Inconsistent(problems))
        }
    }

    /// Persist all three tables.
    pub fn commit(&self) -> Result<(), ServiceError> {
        let docs: Vec<CorpusRecord> = self.documents.values().map(Document::to_record).collect();
        write_jsonl(&self.dir.join(DOCUMENTS_FILE), &docs)?;
        write_jsonl(&self.dir.join(EXTRACTIONS_FILE), self.extractions.values())?;
        write_jsonl(&self.dir.join(JOURNAL_FILE), self.journal.values())
    }
}
