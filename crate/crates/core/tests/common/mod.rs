// Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use evidence_atlas::classify::{ClassifyError, Classifier, Task};
use evidence_atlas::corpus::{load_gold_corpus, GoldDocument, TokenSpan};
use evidence_atlas::evidence_map::{LinkedTriplet, MapDocument};
use evidence_atlas::normalize::{
    build_dictionary, load_synonyms, normalize_document, text_concepts, Ontology, SynonymDictionary,
};
use evidence_atlas::pico::{PicoSpan, SpanSource};
use evidence_atlas::text::{word_tokens, NormalizeConfig};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn ontology() -> Ontology {
    Ontology::load(&fixture("ontology.tsv")).expect("fixture ontology")
}

pub fn dictionary(ont: &Ontology) -> SynonymDictionary {
    let rows = load_synonyms(&fixture("synonyms.tsv")).expect("fixture synonyms");
    let (dict, rejected) = build_dictionary(ont, &rows, NormalizeConfig::default());
    assert!(rejected.is_empty(), "{rejected:?}");
    dict
}

pub fn gold_corpus() -> Vec<GoldDocument> {
    load_gold_corpus(&fixture("corpus.jsonl"), &fixture("gold.jsonl")).expect("fixture gold")
}

/// Write a config into `dir` that points at the fixture resources and keeps the store in `dir`.
pub fn temp_config(dir: &Path, version: &str) -> PathBuf {
    let f = |n: &str| fixture(n).display().to_string();
    let body = format!(
        r#"pipeline_version = "{version}"
workers = 4

[paths]
store = "{store}"
ontology = "{ont}"
synonyms = "{syn}"
gazetteer = "{gaz}"

[models]
rct = "{rct}"
evidence = "{ev}"
role = "{role}"
direction = "{dir}"
"#,
        store = dir.join("store").display(),
        ont = f("ontology.tsv"),
        syn = f("synonyms.tsv"),
        gaz = f("gazetteer.tsv"),
        rct = f("models/rct_rules.json"),
        ev = f("models/evidence_rules.json"),
        role = f("models/role_rules.json"),
        dir = f("models/direction_rules.json"),
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

pub fn gold_spans(g: &GoldDocument) -> Vec<PicoSpan> {
    g.gold
        .pico_spans
        .iter()
        .map(|s| PicoSpan::new(s.label, s.span.clone(), 1.0, SpanSource::Gold))
        .collect()
}

fn gold_pico(label: evidence_atlas::corpus::PicoLabel, span: &TokenSpan) -> PicoSpan {
    PicoSpan::new(label, span.clone(), 1.0, SpanSource::Gold)
}

/// Map inputs built from expert annotations: spans and triplets linked with `dict`.
pub fn gold_map_documents(gold: &[GoldDocument], dict: &SynonymDictionary) -> Vec<MapDocument> {
    use evidence_atlas::corpus::PicoLabel::*;
    gold.iter()
        .map(|g| MapDocument {
            doc_id: g.document.doc_id.clone(),
            concepts: normalize_document(&gold_spans(g), dict),
            triplets: g
                .gold
                .triplets
                .iter()
                .map(|t| LinkedTriplet {
                    intervention: gold_pico(Intervention, &t.intervention),
                    comparator: gold_pico(Intervention, &t.comparator),
                    outcome: gold_pico(Outcome, &t.outcome),
                    evidence_sentence_index: t.evidence_sentence_index,
                    direction: t.direction,
                    direction_probs: None,
                    intervention_concepts: text_concepts(&t.intervention.text, dict),
                    outcome_concepts: text_concepts(&t.outcome.text, dict),
                })
                .collect(),
        })
        .collect()
}

/// Normalized synonym key -> concepts, built straight from the resource files.
pub fn oracle_synonym_table(ont: &Ontology) -> HashMap<String, BTreeSet<String>> {
    let cfg = NormalizeConfig::default();
    let mut table: HashMap<String, BTreeSet<String>> = HashMap::new();
    let mut add = |id: &str, s: &str| {
        let k = cfg.key(s);
        if !k.is_empty() {
            table.entry(k).or_default().insert(id.to_string());
        }
    };
    for c in ont.concepts() {
        for s in &c.synonyms {
            add(&c.concept_id, s);
        }
    }
    for row in load_synonyms(&fixture("synonyms.tsv")).unwrap() {
        add(&row.concept_id, &row.synonym);
    }
    table
}

/// Every token window is tried; at each position the longest window present in the
/// table wins and scanning resumes after it. Returns (start, end, concepts).
pub fn brute_force_matches(
    text: &str,
    table: &HashMap<String, BTreeSet<String>>,
) -> Vec<(usize, usize, BTreeSet<String>)> {
    let toks = word_tokens(text);
    let norms: Vec<&str> = toks.iter().map(|t| t.norm.as_str()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let mut hit = None;
        for j in (i + 1..=toks.len()).rev() {
            if let Some(ids) = table.get(&norms[i..j].join(" ")) {
                hit = Some((j, ids.clone()));
                break;
            }
        }
        match hit {
            Some((j, ids)) => {
                out.push((toks[i].start, toks[j - 1].end, ids));
                i = j;
            }
            None => i += 1,
        }
    }
    out
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

/// Role classifier that answers from the expert triplets, keyed by evidence sentence
/// text and normalized treatment.
pub struct OracleRoles {
    labels: Vec<String>,
    roles: HashMap<(String, String), usize>,
}

impl OracleRoles {
    pub fn new(gold: &[GoldDocument]) -> Self {
        let mut roles = HashMap::new();
        for g in gold {
            for t in &g.gold.triplets {
                let ev = g.document.sentences[t.evidence_sentence_index].text.clone();
                roles.insert((ev.clone(), NormalizeConfig::default().key(&t.intervention.text)), 0);
                roles.insert((ev, NormalizeConfig::default().key(&t.comparator.text)), 1);
            }
        }
        OracleRoles {
            labels: Task::Role.labels(),
            roles,
        }
    }
}

impl Classifier for OracleRoles {
    fn task(&self) -> &str {
        "role"
    }
    fn labels(&self) -> &[String] {
        &self.labels
    }
    fn predict(&self, segments: &[String]) -> Result<Vec<f64>, ClassifyError> {
        let key = (segments[1].clone(), NormalizeConfig::default().key(&segments[0]));
        Ok(one_hot(3, *self.roles.get(&key).unwrap_or(&2)))
    }
}

/// Direction classifier keyed by outcome text and evidence sentence text.
pub struct OracleDirections {
    labels: Vec<String>,
    directions: HashMap<(String, String), usize>,
}

impl OracleDirections {
    pub fn new(gold: &[GoldDocument]) -> Self {
        let mut directions = HashMap::new();
        for g in gold {
            for t in &g.gold.triplets {
                let ev = g.document.sentences[t.evidence_sentence_index].text.clone();
                let k = evidence_atlas::corpus::Direction::CLASSES
                    .iter()
                    .position(|d| *d == t.direction)
                    .expect("gold direction is a class");
                directions.insert((t.outcome.text.clone(), ev), k);
            }
        }
        OracleDirections {
            labels: Task::Direction.labels(),
            directions,
        }
    }
}

impl Classifier for OracleDirections {
    fn task(&self) -> &str {
        "direction"
    }
    fn labels(&self) -> &[String] {
        &self.labels
    }
    fn predict(&self, segments: &[String]) -> Result<Vec<f64>, ClassifyError> {
        self.directions
            .get(&(segments[0].clone(), segments[1].clone()))
            .map(|&k| one_hot(3, k))
            .ok_or_else(|| ClassifyError::BadResponse(format!("no gold direction for {:?}", segments[0])))
    }
}

/// Expected map cells: (intervention, outcome) -> (docs, [inc, dec, no diff], refs).
pub type OracleCells = BTreeMap<(String, String), (BTreeSet<String>, [usize; 3], BTreeSet<(String, usize)>)>;

pub fn oracle_cells(docs: &[MapDocument]) -> OracleCells {
    use evidence_atlas::corpus::Direction;
    let mut seen = BTreeSet::new();
    let mut cells = OracleCells::new();
    for d in docs {
        for t in &d.triplets {
            let slot = match t.direction {
                Direction::Increased => 0,
                Direction::Decreased => 1,
                Direction::NoDifference => 2,
                _ => continue,
            };
            for i in &t.intervention_concepts {
                for o in &t.outcome_concepts {
                    let key = (
                        d.doc_id.clone(),
                        i.clone(),
                        o.clone(),
                        t.evidence_sentence_index,
                        t.outcome.span.start,
                        t.outcome.span.end,
                    );
                    if !seen.insert(key) {
                        continue;
                    }
                    let c = cells.entry((i.clone(), o.clone())).or_default();
                    c.0.insert(d.doc_id.clone());
                    c.1[slot] += 1;
                    c.2.insert((d.doc_id.clone(), t.evidence_sentence_index));
                }
            }
        }
    }
    cells
}

/// Start the HTTP service on an ephemeral port in a background runtime.
pub fn spawn_server(api: std::sync::Arc<evidence_atlas::service::Api>) -> std::net::SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            evidence_atlas::service::http::serve_on(listener, api, std::future::pending())
                .await
                .unwrap();
        });
    });
    rx.recv().expect("server address")
}

/// Ingest the fixture feed into a fresh store under `dir` and open an API over it.
pub fn ingest_fixture(dir: &Path) -> (evidence_atlas::service::Config, evidence_atlas::service::IngestReport, evidence_atlas::service::Api) {
    use evidence_atlas::service::{run_pipeline, Api, Config, IngestOptions, Pipeline, Snapshot, Store};
    let cfg = Config::load(&temp_config(dir, "fixture-1")).unwrap();
    let pipeline = Pipeline::from_config(&cfg).unwrap();
    let mut store = Store::open(&cfg.store_dir()).unwrap();
    let report = run_pipeline(&fixture("corpus.jsonl"), &pipeline, &mut store, &IngestOptions::default()).unwrap();
    let snap = Snapshot::new(&store, pipeline.ontology.clone(), &pipeline.dictionary, cfg.api);
    (cfg, report, Api::new(snap))
}
