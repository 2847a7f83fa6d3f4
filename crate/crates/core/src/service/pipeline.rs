//! Batch ingestion: feed -> abbreviation expansion -> gate -> tagging -> evidence and
//! ICO assembly -> concept linking -> store and index.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Config, Thresholds};
use super::store::{content_hash, Disposition, ExtractionRecord, JournalEntry, Stage, Store};
use super::ServiceError;
use crate::abbrev::{preprocess, OffsetMap};
use crate::classify::{Classifier, ClassifierHandle, Task};
use crate::corpus::{parse_corpus, Document, TokenSpan};
use crate::evidence::{assemble_ico, classify_evidence_sentences, Diagnostic};
use crate::evidence_map::{link_triplet, LinkedTriplet};
use crate::gate::gate;
use crate::normalize::{
    build_dictionary, load_synonyms, normalize_document, DictionaryFile, Ontology, SynonymDictionary,
};
use crate::pico::{tag_spans, Gazetteer, GazetteerTagger, NullTagger, PicoSpan, RemoteTokenTagger, TaggerBackend};
use crate::text::{char_slice, NormalizeConfig};

pub const MAX_FAILURE_SAMPLES: usize = 50;

/// Models, dictionary and thresholds for one pipeline version.
pub struct Pipeline {
    pub version: String,
    pub ontology: Ontology,
    pub dictionary: SynonymDictionary,
    pub thresholds: Thresholds,
    pub workers: usize,
    gate: Box<dyn Classifier>,
    evidence: Box<dyn Classifier>,
    role: Box<dyn Classifier>,
    direction: Box<dyn Classifier>,
    tagger: Box<dyn TaggerBackend>,
}

/// Components of a pipeline built in code rather than from a config file.
pub struct PipelineParts {
    pub version: String,
    pub ontology: Ontology,
    pub dictionary: SynonymDictionary,
    pub thresholds: Thresholds,
    pub workers: usize,
    pub gate: Box<dyn Classifier>,
    pub evidence: Box<dyn Classifier>,
    pub role: Box<dyn Classifier>,
    pub direction: Box<dyn Classifier>,
    pub tagger: Box<dyn TaggerBackend>,
}

fn read(path: &Path) -> Result<Vec<u8>, ServiceError> {
    fs::read(path).map_err(|e| ServiceError::io(path, e))
}

pub fn load_dictionary(cfg: &Config, ontology: &Ontology) -> Result<SynonymDictionary, ServiceError> {
    if let Some(p) = &cfg.paths.dictionary {
        let path = cfg.resolve(p);
        let file: DictionaryFile = serde_json::from_slice(&read(&path)?)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        return Ok(SynonymDictionary::from_file(file));
    }
    let rows = match &cfg.paths.synonyms {
        Some(p) => load_synonyms(&cfg.resolve(p))?,
        None => Vec::new(),
    };
    let (dict, rejected) = build_dictionary(ontology, &rows, NormalizeConfig::default());
    for r in rejected {
        warn!("synonym {} / {:?} skipped: {}", r.row.concept_id, r.row.synonym, r.reason);
    }
    Ok(dict)
}

impl Pipeline {
    pub fn new(p: PipelineParts) -> Self {
        Pipeline {
            version: p.version,
            ontology: p.ontology,
            dictionary: p.dictionary,
            thresholds: p.thresholds,
            workers: p.workers.max(1),
            gate: p.gate,
            evidence: p.evidence,
            role: p.role,
            direction: p.direction,
            tagger: p.tagger,
        }
    }

    /// Build from config. The version is the configured label plus a digest of every
    /// resource and threshold, so changing a model forces re-extraction.
    pub fn from_config(cfg: &Config) -> Result<Self, ServiceError> {
        let mut digest = Sha256::new();
        let onto_path = cfg.resolve(&cfg.paths.ontology);
        digest.update(read(&onto_path)?);
        let ontology = Ontology::load(&onto_path)?;
        for p in [&cfg.paths.synonyms, &cfg.paths.dictionary, &cfg.paths.gazetteer]
            .into_iter()
            .flatten()
        {
            digest.update(read(&cfg.resolve(p))?);
        }
        let dictionary = load_dictionary(cfg, &ontology)?;
        let m = &cfg.models;
        let mut model = |loc: &str, task: Task| -> Result<Box<dyn Classifier>, ServiceError> {
            let loc = cfg.model_location(loc);
            if loc.starts_with("http") {
                digest.update(loc.as_bytes());
            } else {
                digest.update(read(Path::new(&loc))?);
            }
            Ok(Box::new(ClassifierHandle::load(&loc, task)?))
        };
        let gate = model(&m.rct, Task::Rct)?;
        let evidence = model(&m.evidence, Task::Evidence)?;
        let role = model(&m.role, Task::Role)?;
        let direction = model(&m.direction, Task::Direction)?;
        let tagger: Box<dyn TaggerBackend> = match (&m.pico, &cfg.paths.gazetteer) {
            (Some(url), _) => {
                digest.update(url.as_bytes());
                Box::new(RemoteTokenTagger::new(url)?)
            }
            (None, Some(g)) => Box::new(GazetteerTagger::new(Gazetteer::load(
                &cfg.resolve(g),
                NormalizeConfig::default(),
            )?)),
            (None, None) => Box::new(NullTagger),
        };
        let t = cfg.thresholds;
        digest.update(format!("{} {} {}", t.gate, t.evidence, t.role).as_bytes());
        let hash = format!("{:x}", digest.finalize());
        Ok(Pipeline::new(PipelineParts {
            version: format!("{}+{}", cfg.pipeline_version, &hash[..12]),
            ontology,
            dictionary,
            thresholds: t,
            workers: cfg.workers,
            gate,
            evidence,
            role,
            direction,
            tagger,
        }))
    }

    /// Run one document through every stage. On failure returns the last stage reached.
    pub fn process(&self, doc: &Document) -> Result<ExtractionRecord, (Stage, String)> {
        let hash = content_hash(doc);
        let decision = gate(doc, self.gate.as_ref(), self.thresholds.gate)
            .map_err(|e| (Stage::Ingested, format!("gate: {e}")))?;
        if !decision.is_rct {
            return Ok(ExtractionRecord::gated_out(&doc.doc_id, &self.version, &hash, decision));
        }
        let (pairs, expansion) = preprocess(doc);
        let expanded = &expansion.document;
        let tagging = |e| (Stage::Gated, format!("tagging: {e}"));
        let spans = if self.tagger.original_coordinates() {
            let fwd = Remap {
                map: &expansion.offset_map,
                text: &expanded.abstract_text,
            };
            tag_spans(doc, self.tagger.as_ref())
                .map_err(tagging)?
                .iter()
                .map(|s| fwd.pico_forward(s))
                .collect()
        } else {
            tag_spans(expanded, self.tagger.as_ref()).map_err(tagging)?
        };
        let evidence = classify_evidence_sentences(expanded, self.evidence.as_ref(), self.thresholds.evidence)
            .map_err(|e| (Stage::Gated, format!("evidence: {e}")))?;
        let assembly = assemble_ico(
            expanded,
            &spans,
            &evidence,
            self.role.as_ref(),
            self.direction.as_ref(),
            self.thresholds.role,
        )
        .map_err(|e| (Stage::Gated, format!("assembly: {e}")))?;
        // Link on the expanded text so that short forms resolve through their long form.
        let concepts = normalize_document(&spans, &self.dictionary);
        let triplets: Vec<LinkedTriplet> = assembly
            .triplets
            .iter()
            .map(|t| link_triplet(t, &self.dictionary))
            .collect();

        let back = Remap {
            map: &expansion.offset_map,
            text: &doc.abstract_text,
        };
        let mut concepts = concepts;
        concepts.unlinked = concepts.unlinked.iter().map(|s| back.pico(s)).collect();
        Ok(ExtractionRecord {
            doc_id: doc.doc_id.clone(),
            pipeline_version: self.version.clone(),
            content_hash: hash,
            gate: decision,
            pico_spans: spans.iter().map(|s| back.pico(s)).collect(),
            evidence_sentence_indices: evidence.iter().map(|e| e.sentence_index).collect(),
            evidence,
            triplets: triplets
                .into_iter()
                .map(|mut t| {
                    t.intervention = back.pico(&t.intervention);
                    t.comparator = back.pico(&t.comparator);
                    t.outcome = back.pico(&t.outcome);
                    t
                })
                .collect(),
            concepts,
            abbreviations: pairs,
            diagnostics: assembly
                .diagnostics
                .into_iter()
                .map(|d| match d {
                    Diagnostic::Skipped {
                        sentence_index,
                        outcome,
                        reason,
                    } => Diagnostic::Skipped {
                        sentence_index,
                        outcome: back.span(&outcome),
                        reason,
                    },
                    Diagnostic::DirectionFailed {
                        sentence_index,
                        outcome,
                        error,
                    } => Diagnostic::DirectionFailed {
                        sentence_index,
                        outcome: back.span(&outcome),
                        error,
                    },
                })
                .collect(),
        })
    }
}

/// Maps spans between the original and the expanded abstract; `text` is the target side.
struct Remap<'a> {
    map: &'a OffsetMap,
    text: &'a str,
}

impl Remap<'_> {
    fn span(&self, s: &TokenSpan) -> TokenSpan {
        if self.map.is_identity() {
            return s.clone();
        }
        let (start, end) = self.map.span_to_original(s.start, s.end);
        TokenSpan {
            start,
            end,
            text: char_slice(self.text, start, end).unwrap_or_default().to_string(),
        }
    }

    fn pico(&self, p: &PicoSpan) -> PicoSpan {
        PicoSpan {
            span: self.span(&p.span),
            ..p.clone()
        }
    }

    fn pico_forward(&self, p: &PicoSpan) -> PicoSpan {
        let (start, end) = self.map.span_to_expanded(p.span.start, p.span.end);
        PicoSpan {
            span: TokenSpan {
                start,
                end,
                text: char_slice(self.text, start, end).unwrap_or_default().to_string(),
            },
            ..p.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSample {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub stage: String,
    pub reason: String,
}

/// Per-feed counts. `received` equals the sum of the terminal dispositions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub pipeline_version: String,
    pub received: usize,
    pub rejected: usize,
    /// Older than `--since`.
    pub skipped_since: usize,
    /// Already stored with the same content and pipeline version.
    pub unchanged: usize,
    pub gated_out: usize,
    pub extracted: usize,
    pub failed: usize,
    pub failure_samples: Vec<FailureSample>,
}

impl IngestReport {
    pub fn terminal_total(&self) -> usize {
        self.rejected + self.skipped_since + self.unchanged + self.gated_out + self.extracted + self.failed
    }

    fn sample(&mut self, s: FailureSample) {
        if self.failure_samples.len() < MAX_FAILURE_SAMPLES {
            self.failure_samples.push(s);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Only records stamped at or after this instant; unstamped records always pass.
    pub since: Option<DateTime<Utc>>,
    /// Journal timestamp; the current time when absent.
    pub now: Option<DateTime<Utc>>,
}

const STAMP_KEYS: [&str; 3] = ["updated", "pub_date", "date"];

/// Parse an RFC 3339 instant or a plain `YYYY-MM-DD` date (taken as midnight UTC).
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

pub fn record_timestamp(doc: &Document) -> Option<DateTime<Utc>> {
    STAMP_KEYS
        .iter()
        .find_map(|k| doc.meta.get(*k).and_then(|v| parse_timestamp(v)))
}

/// Ingest a feed file into the store. Per-document failures are recorded and retried
/// next time; an unreadable feed or store aborts.
pub fn run_pipeline(
    feed: &Path,
    pipeline: &Pipeline,
    store: &mut Store,
    opts: &IngestOptions,
) -> Result<IngestReport, ServiceError> {
    let content = fs::read_to_string(feed).map_err(|e| ServiceError::io(feed, e))?;
    let (docs, rejected) = parse_corpus(&content);
    let mut report = IngestReport {
        pipeline_version: pipeline.version.clone(),
        received: docs.len() + rejected.len(),
        rejected: rejected.len(),
        ..IngestReport::default()
    };
    for r in rejected {
        report.sample(FailureSample {
            line: Some(r.line),
            doc_id: r.doc_id,
            stage: "parse".into(),
            reason: r.reason,
        });
    }
    let mut todo = Vec::new();
    for doc in docs {
        if let (Some(since), Some(t)) = (opts.since, record_timestamp(&doc)) {
            if t < since {
                report.skipped_since += 1;
                continue;
            }
        }
        if store.needs_processing(&doc.doc_id, &content_hash(&doc), &pipeline.version) {
            todo.push(doc);
        } else {
            report.unchanged += 1;
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(pipeline.workers)
        .build()
        .map_err(|e| ServiceError::Pool(e.to_string()))?;
    let results: Vec<_> = pool.install(|| todo.par_iter().map(|d| pipeline.process(d)).collect());

    let now = opts.now.unwrap_or_else(Utc::now).to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let seen: BTreeSet<String> = todo.iter().map(|d| d.doc_id.clone()).collect();
    for (doc, result) in todo.into_iter().zip(results) {
        let hash = content_hash(&doc);
        let mut entry = JournalEntry {
            doc_id: doc.doc_id.clone(),
            content_hash: hash,
            pipeline_version: pipeline.version.clone(),
            stage: Stage::Indexed,
            disposition: Disposition::Indexed,
            error: None,
            updated_at: now.clone(),
        };
        let extraction = match result {
            Ok(r) if !r.gate.is_rct => {
                report.gated_out += 1;
                entry.stage = Stage::Gated;
                entry.disposition = Disposition::GatedOut;
                Some(r)
            }
            Ok(r) => {
                report.extracted += 1;
                Some(r)
            }
            Err((stage, reason)) => {
                warn!("{}: {reason}", doc.doc_id);
                report.failed += 1;
                report.sample(FailureSample {
                    line: None,
                    doc_id: Some(doc.doc_id.clone()),
                    stage: format!("{stage:?}").to_lowercase(),
                    reason: reason.clone(),
                });
                entry.stage = stage;
                entry.disposition = Disposition::Failed;
                entry.error = Some(reason);
                None
            }
        };
        store.put(doc, entry, extraction);
    }
    store.reindex();
    store.check_consistency()?;
    store.commit()?;
    info!(
        "ingested {} records: {} extracted, {} gated out, {} unchanged, {} failed, {} rejected ({} processed)",
        report.received,
        report.extracted,
        report.gated_out,
        report.unchanged,
        report.failed,
        report.rejected,
        seen.len()
    );
    Ok(report)
}
