mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use evidence_atlas::corpus::PicoLabel;
use evidence_atlas::evidence_map::{CombineMode, ConceptFilter, Query};
use evidence_atlas::service::store::EXTRACTIONS_FILE;
use evidence_atlas::service::Api;

use common::*;

struct Served {
    _dir: tempfile::TempDir,
    api: Arc<Api>,
    base: String,
    store: std::path::PathBuf,
    client: Client,
}

fn served() -> Served {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _, api) = ingest_fixture(dir.path());
    let api = Arc::new(api);
    let addr = spawn_server(api.clone());
    Served {
        _dir: dir,
        api,
        base: format!("http://{addr}"),
        store: cfg.store_dir(),
        client: Client::new(),
    }
}

impl Served {
    fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(format!("{}{path}", self.base)).send().unwrap();
        (r.status(), r.json().unwrap())
    }

    fn post(&self, path: &str, body: &str) -> (StatusCode, Vec<u8>) {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .unwrap();
        (r.status(), r.bytes().unwrap().to_vec())
    }

    fn post_json(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let (s, b) = self.post(path, &body.to_string());
        (s, serde_json::from_slice(&b).unwrap())
    }
}

#[test]
fn search_returns_documents_with_concept_or_child() {
    let s = served();
    let (status, body) = s.post_json("/search", json!({"population": {"concepts": ["M011"], "mode": "or"}}));
    assert_eq!(status, StatusCode::OK);
    let snap = s.api.snapshot();
    let children: BTreeSet<&str> = snap.ontology.children("M011").map(String::as_str).collect();
    let expected: Vec<&str> = snap
        .extractions
        .values()
        .filter(|r| {
            r.concepts
                .population
                .iter()
                .any(|c| c == "M011" || children.contains(c.as_str()))
        })
        .map(|r| r.doc_id.as_str())
        .collect();
    let got: Vec<&str> = body["doc_ids"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(got, expected);
    assert_eq!(got, ["D01", "D02", "D03"]);
    assert_eq!(body["total"], 3);
    assert!(!body["top_interventions"].as_array().unwrap().is_empty());
}

#[test]
fn search_pages() {
    let s = served();
    let (_, body) = s.post_json(
        "/search",
        json!({"population": {"concepts": ["M011"], "mode": "or"}, "page": 1, "page_size": 2}),
    );
    assert_eq!(body["total"], 3);
    assert_eq!(body["doc_ids"], json!(["D03"]));
    let (status, body) = s.post_json(
        "/search",
        json!({"population": {"concepts": ["M011"], "mode": "or"}, "page_size": 0}),
    );
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field_errors"][0]["field"], "page_size");
}

#[test]
fn query_errors_are_structured() {
    let s = served();
    let (status, body) = s.post_json("/search", json!({"outcome": {"concepts": ["M999"], "mode": "and"}}));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "unknown_concept");
    assert_eq!(body["field_errors"][0]["field"], "outcome");

    let (status, body) = s.post_json("/map", json!({}));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "empty_query");

    let (status, body) = s.post("/search", "{not json");
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(body["code"], "bad_request");
}

#[test]
fn autocomplete_ranks_preferred_names_first() {
    let s = served();
    let (status, body) = s.get("/autocomplete?q=migr");
    assert_eq!(status, StatusCode::OK);
    let hits = body.as_array().unwrap();
    let ids: BTreeSet<&str> = hits.iter().map(|h| h["concept_id"].as_str().unwrap()).collect();
    assert!(ids.is_superset(&BTreeSet::from(["M015", "M016", "M017"])), "{ids:?}");
    for h in hits {
        assert!(h["matched"].as_str().unwrap().to_lowercase().starts_with("migr"));
    }
    let flags: Vec<bool> = hits.iter().map(|h| h["via_synonym"].as_bool().unwrap()).collect();
    assert!(flags.windows(2).all(|w| !w[0] || w[1]), "preferred hits must come first: {flags:?}");
    assert_eq!(hits[0]["via_synonym"], false);
}

#[test]
fn autocomplete_requires_prefix_and_known_role() {
    let s = served();
    let (status, body) = s.get("/autocomplete?q=");
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "prefix_required");
    assert_eq!(body["message"], "prefix required");

    let (status, _) = s.get("/autocomplete?q=dia&role=banana");
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // role filtering only offers concepts indexed under that role
    let (_, body) = s.get("/autocomplete?q=dia&role=population");
    let snap = s.api.snapshot();
    for h in body.as_array().unwrap() {
        let id = h["concept_id"].as_str().unwrap();
        assert!(!snap.index.docs_for(PicoLabel::Population, id, &snap.ontology).is_empty());
    }
}

#[test]
fn document_view_matches_extraction_table() {
    let s = served();
    let (status, body) = s.get("/doc/D01");
    assert_eq!(status, StatusCode::OK);
    let table = std::fs::read_to_string(s.store.join(EXTRACTIONS_FILE)).unwrap();
    let row: Value = table
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|v| v["doc_id"] == "D01")
        .unwrap();
    assert_eq!(body["pico_spans"], row["pico_spans"]);
    assert_eq!(body["triplets"], row["triplets"]);
    assert_eq!(body["journal"]["disposition"], "indexed");
    assert!(body["abstract"].as_str().unwrap().starts_with("We conducted"));

    let (_, gated) = s.get("/doc/D18");
    assert_eq!(gated["gate"]["is_rct"], false);
    assert!(gated["pico_spans"].as_array().unwrap().is_empty());
    assert_eq!(gated["journal"]["disposition"], "gated_out");

    let (status, body) = s.get("/doc/NOPE");
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[test]
fn map_bytes_are_cached_until_swap() {
    let s = served();
    let q = json!({"population": {"concepts": ["M011"], "mode": "or"}}).to_string();
    let (status, first) = s.post("/map", &q);
    assert_eq!(status, StatusCode::OK);
    let (_, second) = s.post("/map", &q);
    assert_eq!(first, second);
    let view: Value = serde_json::from_slice(&first).unwrap();
    assert!(!view["cells"].as_array().unwrap().is_empty());

    let query = Query::default().with(PicoLabel::Population, ConceptFilter::new(CombineMode::Or, &["M011"]));
    let a = s.api.map_json(&query).unwrap();
    let b = s.api.map_json(&query).unwrap();
    assert!(Arc::ptr_eq(&a, &b));
    let snap = s.api.snapshot();
    let store = evidence_atlas::service::Store::open(&s.store).unwrap();
    let ont = snap.ontology.clone();
    s.api.swap(evidence_atlas::service::Snapshot::new(&store, ont.clone(), &dictionary(&ont), snap.config));
    let c = s.api.map_json(&query).unwrap();
    assert!(!Arc::ptr_eq(&a, &c));
    assert_eq!(*a, *c);
}

#[test]
fn health_reports_counts() {
    let s = served();
    let (status, body) = s.get("/health");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["documents"], 20);
    assert_eq!(body["extracted"], 17);
}
