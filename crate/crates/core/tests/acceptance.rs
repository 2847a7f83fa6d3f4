//! Acceptance criteria 1 to 10. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails. Run with `--nocapture` to see the lines.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evidence_atlas::abbrev::{detect_in_text, preprocess, Expansion};
use evidence_atlas::classify::features::FeatureConfig;
use evidence_atlas::classify::linear::{objective, train, LinearModel, TrainConfig};
use evidence_atlas::classify::{Classifier, LabeledExample};
use evidence_atlas::corpus::{Direction, PicoLabel, TokenSpan};
use evidence_atlas::eval::report::{
    concept_report, direction_report, evidence_report, pico_report, ConceptSource, EvalReport, PredictionRecord,
    SpanRef, TripletPrediction, DEFAULT_MACRO_LABELS, TOP_ERRORS,
};
use evidence_atlas::eval::{
    concept_eval, entity_prf, per_class_direction_scores, sentence_prf, token_prf, ConceptDoc, DirectionItem,
    PromptMode, Prf,
};
use evidence_atlas::evidence::{
    assemble_ico, build_evidence_training_set, generate_relation_negatives, CorruptionKind, EvidenceSentence,
    NegativeConfig, SamplingWarning, DEFAULT_LENGTH_TOLERANCE, ROLE_NOT_INVOLVED,
};
use evidence_atlas::evidence_map::{aggregate, filter_documents, CombineMode, ConceptFilter, MapDocument, Query};
use evidence_atlas::normalize::{match_concepts, Concept, Ontology};
use evidence_atlas::service::store::{DOCUMENTS_FILE, EXTRACTIONS_FILE, JOURNAL_FILE};
use evidence_atlas::service::{run_pipeline, Config, IngestOptions, Pipeline, Store};
use evidence_atlas::text::CharIndex;

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// 1. Dictionary matcher against an all-windows oracle on seeded random text.
fn criterion_1() -> Outcome {
    let ont = ontology();
    let dict = dictionary(&ont);
    let table = oracle_synonym_table(&ont);
    let mut phrases: Vec<String> = table.keys().cloned().collect();
    phrases.sort();
    let mut words: Vec<String> = phrases.iter().flat_map(|p| p.split(' ').map(String::from)).collect();
    words.sort();
    words.dedup();
    let filler = ["the", "of", "and", "with", "patients", "trial", "was", "in", "no"];
    let punct = [",", ".", ";", "(", ")", "-", "/", ":"];

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut mismatches = 0;
    let mut total_matches = 0;
    let mut first_bad = None;
    for _ in 0..1000 {
        let mut text = String::new();
        for _ in 0..rng.random_range(3..30) {
            let piece = match rng.random_range(0..10) {
                0..=3 => phrases.choose(&mut rng).unwrap().clone(),
                4..=6 => words.choose(&mut rng).unwrap().clone(),
                7 | 8 => filler.choose(&mut rng).unwrap().to_string(),
                _ => punct.choose(&mut rng).unwrap().to_string(),
            };
            let piece = match rng.random_range(0..4) {
                0 => piece.to_uppercase(),
                1 => {
                    let mut c = piece.chars();
                    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
                }
                _ => piece,
            };
            if !text.is_empty() && rng.random_bool(0.85) {
                text.push(' ');
            }
            text.push_str(&piece);
        }
        let got: Vec<(usize, usize, BTreeSet<String>)> = match_concepts(&text, &dict)
            .into_iter()
            .map(|m| (m.span.start, m.span.end, m.concept_ids))
            .collect();
        let want = brute_force_matches(&text, &table);
        total_matches += want.len();
        if got != want {
            mismatches += 1;
            first_bad.get_or_insert(text);
        }
    }
    let elapsed = start.elapsed();
    check(mismatches == 0, || format!("{mismatches} texts differ, e.g. {first_bad:?}"))?;
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 texts, {total_matches} matches agree, {:.2}s", elapsed.as_secs_f64()))
}

fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> Ontology {
    let ids: Vec<String> = (0..n).map(|i| format!("C{i:03}")).collect();
    let concepts = (0..n)
        .map(|i| {
            let k = if i == 0 { 0 } else { rng.random_range(0..=2.min(i)) };
            let parents: BTreeSet<&str> = (0..k).map(|_| ids[rng.random_range(0..i)].as_str()).collect();
            let parents: Vec<&str> = parents.into_iter().collect();
            Concept::new(&ids[i], &format!("concept {i}"), &parents)
        })
        .collect();
    Ontology::new(concepts).expect("generated DAG")
}

// 2. Relaxed matching never scores below strict; the parent/child example scores as specified.
fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sets = 0;
    for _ in 0..20 {
        let ont = random_dag(&mut rng, 25);
        let ids: Vec<String> = ont.concepts().map(|c| c.concept_id.clone()).collect();
        let pick = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
            (0..rng.random_range(0..6)).map(|_| ids.choose(rng).unwrap().clone()).collect()
        };
        for _ in 0..6 {
            let docs: Vec<ConceptDoc> = (0..rng.random_range(1..5))
                .map(|i| ConceptDoc {
                    doc_id: format!("d{i}"),
                    pred: pick(&mut rng),
                    gold: pick(&mut rng),
                })
                .collect();
            let strict = concept_eval(&docs, &ont, false).map_err(|e| e.to_string())?;
            let relaxed = concept_eval(&docs, &ont, true).map_err(|e| e.to_string())?;
            check(
                relaxed.prf.precision >= strict.prf.precision && relaxed.prf.recall >= strict.prf.recall,
                || format!("relaxed {:?} below strict {:?} for {docs:?}", relaxed.prf, strict.prf),
            )?;
            sets += 1;
        }
    }
    let ont = Ontology::new(vec![
        Concept::new("A", "a", &[]),
        Concept::new("B", "b", &[]),
        Concept::new("C", "c", &["B"]),
    ])
    .unwrap();
    let doc = ConceptDoc {
        doc_id: "x".into(),
        pred: ["A", "B"].iter().map(|s| s.to_string()).collect(),
        gold: ["A", "C"].iter().map(|s| s.to_string()).collect(),
    };
    let s = concept_eval(std::slice::from_ref(&doc), &ont, false).map_err(|e| e.to_string())?.prf;
    let r = concept_eval(std::slice::from_ref(&doc), &ont, true).map_err(|e| e.to_string())?.prf;
    check(
        close(s.precision, 0.5, 1e-12) && close(s.recall, 0.5, 1e-12),
        || format!("strict {s:?}"),
    )?;
    check(
        close(r.precision, 1.0, 1e-12) && close(r.recall, 1.0, 1e-12),
        || format!("relaxed {r:?}"),
    )?;
    Ok(format!("{sets} random sets, relaxed >= strict; parent/child example 0.5/0.5 -> 1/1"))
}

fn prf_is(p: &Prf, precision: f64, recall: f64) -> bool {
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    close(p.precision, precision, 1e-12) && close(p.recall, recall, 1e-12) && close(p.f1, f1, 1e-12)
}

fn span(text: &str, start: usize, end: usize) -> TokenSpan {
    TokenSpan {
        start,
        end,
        text: CharIndex::new(text).slice(text, start, end).unwrap().to_string(),
    }
}

// 3. Metric micro-fixtures with hand-computed values.
fn criterion_3() -> Outcome {
    // ten two-letter tokens; token k spans [3k, 3k + 2)
    let text = "t0 t1 t2 t3 t4 t5 t6 t7 t8 t9";
    let tok = token_prf(&[span(text, 3, 14)], &[span(text, 6, 20)], text);
    check(prf_is(&tok, 0.75, 0.6), || format!("token {tok:?}"))?;

    let ent = entity_prf(&[span(text, 0, 14)], &[span(text, 0, 5), span(text, 9, 14)]);
    check((ent.tp, ent.fp, ent.fn_) == (1, 0, 1), || format!("entity {ent:?}"))?;
    check(prf_is(&ent, 1.0, 0.5), || format!("entity {ent:?}"))?;

    let sent = sentence_prf(&BTreeSet::from([1, 2, 3]), &BTreeSet::from([2, 3, 4]));
    check(prf_is(&sent, 2.0 / 3.0, 2.0 / 3.0), || format!("sentence {sent:?}"))?;

    let item = |o: usize, d: Direction| DirectionItem {
        doc_id: "D".into(),
        intervention: span(text, 0, 2),
        comparator: span(text, 3, 5),
        outcome: span(text, 3 * o, 3 * o + 2),
        evidence_sentence_index: 0,
        direction: d,
    };
    let gold = vec![
        item(6, Direction::Increased),
        item(7, Direction::Decreased),
        item(8, Direction::NoDifference),
    ];
    let pred = vec![
        item(6, Direction::Decreased),
        item(7, Direction::Decreased),
        item(8, Direction::NoDifference),
    ];
    for mode in [PromptMode::GoldPrompts, PromptMode::PredictedPrompts] {
        let s = per_class_direction_scores(&pred, &gold, mode);
        let inc = s.class(Direction::Increased).unwrap();
        let dec = s.class(Direction::Decreased).unwrap();
        let nd = s.class(Direction::NoDifference).unwrap();
        check(
            prf_is(inc, 0.0, 0.0) && prf_is(dec, 0.5, 1.0) && prf_is(nd, 1.0, 1.0),
            || format!("direction {mode:?}: {inc:?} {dec:?} {nd:?}"),
        )?;
    }
    Ok("token 0.75/0.6, entity tp1 fn1, sentence 2/3, direction confusion exact to 1e-12".into())
}

fn random_segment(rng: &mut ChaCha8Rng) -> String {
    let vocab = ["reduced", "pain", "placebo", "increase", "no", "difference", "blood", "pressure", "mg"];
    (0..rng.random_range(2..7)).map(|_| *vocab.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

// 4. Analytic gradient against central differences; convergence on a separable toy set.
fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let features = FeatureConfig {
        hash_bits: 6,
        ..FeatureConfig::default()
    };
    let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let mut model = LinearModel::zeros("probe", labels.clone(), features);
    for w in model.weights_mut() {
        *w = rng.random_range(-0.5..0.5);
    }
    for b in model.bias_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    let data: Vec<_> = (0..10)
        .map(|_| (model.featurize(&[random_segment(&mut rng)]), rng.random_range(0..3)))
        .collect();
    let l2 = 0.01;
    let h = 1e-5;
    let (_, grad) = objective(&model, &data, l2);
    let mut worst: f64 = 0.0;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
    for i in 0..model.weights().len() {
        let w0 = model.weights()[i];
        model.weights_mut()[i] = w0 + h;
        let up = objective(&model, &data, l2).0;
        model.weights_mut()[i] = w0 - h;
        let down = objective(&model, &data, l2).0;
        model.weights_mut()[i] = w0;
        worst = worst.max(rel(grad.weights[i], (up - down) / (2.0 * h)));
    }
    for i in 0..model.bias().len() {
        let b0 = model.bias()[i];
        model.bias_mut()[i] = b0 + h;
        let up = objective(&model, &data, l2).0;
        model.bias_mut()[i] = b0 - h;
        let down = objective(&model, &data, l2).0;
        model.bias_mut()[i] = b0;
        worst = worst.max(rel(grad.bias[i], (up - down) / (2.0 * h)));
    }
    check(worst < 1e-4, || format!("max relative gradient error {worst:e}"))?;

    let toy: Vec<LabeledExample> = (0..20)
        .map(|i| {
            let (cue, label) = if i % 2 == 0 { ("improved", 0) } else { ("worsened", 1) };
            LabeledExample::new(vec![format!("{cue} outcome {}", i / 2)], label)
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 50,
        features: FeatureConfig {
            hash_bits: 12,
            ..FeatureConfig::default()
        },
        ..TrainConfig::default()
    };
    let two: Vec<String> = vec!["up".into(), "down".into()];
    let m = train("toy", &two, &toy, &cfg).map_err(|e| e.to_string())?;
    let correct = toy
        .iter()
        .filter(|e| {
            let p = m.predict(&e.segments).unwrap();
            (p[1] > p[0]) == (e.label == 1)
        })
        .count();
    check(correct == toy.len(), || format!("toy accuracy {correct}/20"))?;
    Ok(format!("max relative gradient error {worst:.1e}; toy set 20/20 after 50 epochs"))
}

// 5. Training-set builders: balanced, length-matched, all corruption kinds, deterministic.
fn criterion_5() -> Outcome {
    let gold = gold_corpus();
    let set = build_evidence_training_set(&gold, DEFAULT_LENGTH_TOLERANCE, 7);
    let again = build_evidence_training_set(&gold, DEFAULT_LENGTH_TOLERANCE, 7);
    check(
        serde_json::to_vec(&set).unwrap() == serde_json::to_vec(&again).unwrap(),
        || "evidence training set differs between runs".into(),
    )?;
    let all_evidence: BTreeSet<&str> = set
        .warnings
        .iter()
        .filter_map(|w| match w {
            SamplingWarning::AllEvidence { doc_id } => Some(doc_id.as_str()),
            _ => None,
        })
        .collect();
    let mut fallbacks = 0;
    for g in &gold {
        let id = g.document.doc_id.as_str();
        let pos = set.samples.iter().filter(|s| s.doc_id == id && s.evidence).count();
        let neg: Vec<_> = set.samples.iter().filter(|s| s.doc_id == id && !s.evidence).collect();
        check(pos == neg.len() || all_evidence.contains(id), || {
            format!("{id}: {pos} positives, {} negatives", neg.len())
        })?;
        let len = |i: usize| g.document.sentences[i].text.chars().count() as f64;
        for n in neg {
            check(!g.gold.evidence_sentence_indices.contains(&n.sentence_index), || {
                format!("{id}: negative {} is evidence", n.sentence_index)
            })?;
            let p = n.matched_to.ok_or_else(|| format!("{id}: unmatched negative"))?;
            if n.fallback {
                fallbacks += 1;
            } else {
                check((len(n.sentence_index) - len(p)).abs() <= 0.2 * len(p), || {
                    format!("{id}: negative {} not within 20% of {p}", n.sentence_index)
                })?;
            }
        }
    }
    let cfg = NegativeConfig::default();
    let negs = generate_relation_negatives(&gold, &cfg);
    check(
        serde_json::to_vec(&negs).unwrap() == serde_json::to_vec(&generate_relation_negatives(&gold, &cfg)).unwrap(),
        || "relation negatives differ between runs".into(),
    )?;
    let kinds: BTreeSet<CorruptionKind> = negs.iter().map(|n| n.kind).collect();
    check(kinds == CorruptionKind::ALL.into_iter().collect(), || format!("kinds {kinds:?}"))?;
    check(negs.iter().all(|n| n.example.label == ROLE_NOT_INVOLVED), || "negative not labeled not_involved".into())?;
    Ok(format!(
        "{} evidence samples ({fallbacks} flagged fallbacks), {} relation negatives of 3 kinds, byte-identical reruns",
        set.samples.len(),
        negs.len()
    ))
}

type TripletKey = ((usize, usize), (usize, usize), (usize, usize), usize, Direction);

// 6. Assembly with gold spans and oracle classifiers reproduces the gold triplets.
fn criterion_6() -> Outcome {
    let gold = gold_corpus();
    let roles = OracleRoles::new(&gold);
    let directions = OracleDirections::new(&gold);
    let k = |s: &TokenSpan| (s.start, s.end);
    let start = Instant::now();
    let mut want = BTreeSet::new();
    let mut got = BTreeSet::new();
    for g in &gold {
        let id = g.document.doc_id.as_str();
        let evidence: Vec<EvidenceSentence> = g
            .gold
            .evidence_sentence_indices
            .iter()
            .map(|&i| EvidenceSentence {
                sentence_index: i,
                confidence: 1.0,
            })
            .collect();
        let a = assemble_ico(&g.document, &gold_spans(g), &evidence, &roles, &directions, 0.5)
            .map_err(|e| format!("{id}: {e}"))?;
        for t in a.triplets {
            let key: TripletKey = (
                k(&t.intervention.span),
                k(&t.comparator.span),
                k(&t.outcome.span),
                t.evidence_sentence_index,
                t.direction,
            );
            got.insert((id.to_string(), key));
        }
        for t in &g.gold.triplets {
            let key: TripletKey = (
                k(&t.intervention),
                k(&t.comparator),
                k(&t.outcome),
                t.evidence_sentence_index,
                t.direction,
            );
            want.insert((id.to_string(), key));
        }
    }
    let elapsed = start.elapsed();
    let tp = got.intersection(&want).count();
    let prf = Prf::from_counts(tp, got.len() - tp, want.len() - tp);
    check(prf.precision == 1.0 && prf.recall == 1.0, || {
        format!(
            "P={} R={}; extra {:?}; missing {:?}",
            prf.precision,
            prf.recall,
            got.difference(&want).take(3).collect::<Vec<_>>(),
            want.difference(&got).take(3).collect::<Vec<_>>()
        )
    })?;
    check(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{} gold triplets reproduced, P=R=1, {:.3}s", want.len(), elapsed.as_secs_f64()))
}

fn random_query(rng: &mut ChaCha8Rng, pool: &[String]) -> Query {
    let mut q = Query::default();
    while q.fields().next().is_none() {
        for label in PicoLabel::ALL {
            if rng.random_bool(0.5) {
                let ids: Vec<&str> = (0..rng.random_range(1..4)).map(|_| pool.choose(rng).unwrap().as_str()).collect();
                let mode = if rng.random_bool(0.5) { CombineMode::And } else { CombineMode::Or };
                q = q.with(label, ConceptFilter::new(mode, &ids));
            }
        }
    }
    q
}

fn extend_filter(q: &Query, label: PicoLabel, extra: &str) -> Option<(Query, CombineMode)> {
    let f = q.fields().find(|(l, _)| *l == label)?.1.clone();
    let mut g = f.clone();
    if g.concepts.contains(&extra.to_string()) {
        return None;
    }
    g.concepts.push(extra.to_string());
    Some((q.clone().with(label, g), f.mode))
}

// 7. Aggregation equals a group-by oracle; filters are monotone.
fn criterion_7() -> Outcome {
    let ont = ontology();
    let dict = dictionary(&ont);
    let docs: Vec<MapDocument> = gold_map_documents(&gold_corpus(), &dict);
    let map = aggregate(&docs);
    let oracle = oracle_cells(&docs);
    let got: BTreeMap<_, _> = map
        .cells
        .iter()
        .map(|(k, c)| {
            let refs: BTreeSet<(String, usize)> =
                c.evidence_refs.iter().map(|r| (r.doc_id.clone(), r.sentence_index)).collect();
            (k.clone(), (c.doc_ids.clone(), [c.n_increased, c.n_decreased, c.n_no_difference], refs))
        })
        .collect();
    check(got == oracle, || {
        let diff: Vec<_> = oracle.keys().filter(|k| got.get(*k) != oracle.get(*k)).take(3).collect();
        format!("{} cells vs {} expected; first differences {diff:?}", got.len(), oracle.len())
    })?;

    let mut pool: Vec<String> = docs.iter().flat_map(|d| d.concepts.all()).collect::<BTreeSet<_>>().into_iter().collect();
    pool.extend(ont.concepts().take(10).map(|c| c.concept_id.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for _ in 0..500 {
        let q = random_query(&mut rng, &pool);
        let base = filter_documents(&docs, &q, &ont).map_err(|e| e.to_string())?;
        let label = *PicoLabel::ALL.choose(&mut rng).unwrap();
        let extra = pool.choose(&mut rng).unwrap();
        match extend_filter(&q, label, extra) {
            Some((q2, mode)) => {
                let r = filter_documents(&docs, &q2, &ont).map_err(|e| e.to_string())?;
                let ok = match mode {
                    CombineMode::Or => r.is_superset(&base),
                    CombineMode::And => r.is_subset(&base),
                };
                check(ok, || format!("{mode:?} extension of {q:?} by {extra} not monotone"))?;
            }
            None if q.fields().all(|(l, _)| l != label) => {
                let q2 = q.clone().with(label, ConceptFilter::new(CombineMode::Or, &[extra]));
                let r = filter_documents(&docs, &q2, &ont).map_err(|e| e.to_string())?;
                check(r.is_subset(&base), || format!("adding {label:?} filter to {q:?} grew the result"))?;
            }
            None => {}
        }
        checked += 1;
    }
    Ok(format!("{} cells match the oracle; {checked} random queries monotone", got.len()))
}

fn store_bytes(dir: &std::path::Path) -> Vec<Vec<u8>> {
    [DOCUMENTS_FILE, EXTRACTIONS_FILE, JOURNAL_FILE]
        .iter()
        .map(|f| fs::read(dir.join(f)).unwrap_or_default())
        .collect()
}

// 8. Idempotent ingest, per-record failure isolation, and an ingest-to-HTTP round trip.
fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Config::load(&temp_config(tmp.path(), "fixture-1")).map_err(|e| e.to_string())?;
    let pipeline = Pipeline::from_config(&cfg).map_err(|e| e.to_string())?;
    let feed = fixture("corpus.jsonl");
    let mut store = Store::open(&cfg.store_dir()).map_err(|e| e.to_string())?;
    let first = run_pipeline(&feed, &pipeline, &mut store, &IngestOptions::default()).map_err(|e| e.to_string())?;
    let before = store_bytes(&cfg.store_dir());
    let mut store = Store::open(&cfg.store_dir()).map_err(|e| e.to_string())?;
    let later = IngestOptions {
        now: Some(chrono::Utc::now() + chrono::Duration::days(1)),
        ..IngestOptions::default()
    };
    let second = run_pipeline(&feed, &pipeline, &mut store, &later).map_err(|e| e.to_string())?;
    check(second.unchanged == 20 && second.terminal_total() == 20, || format!("second run {second:?}"))?;
    check(before == store_bytes(&cfg.store_dir()), || "store changed on re-ingest".into())?;

    let tmp2 = tempfile::tempdir().unwrap();
    let mut lines: Vec<String> = fs::read_to_string(&feed).unwrap().lines().map(String::from).collect();
    lines[6] = r#"{"doc_id": "BROKEN", "title": "truncated"#.to_string();
    let bad_feed = tmp2.path().join("feed.jsonl");
    fs::write(&bad_feed, lines.join("\n")).unwrap();
    let cfg2 = Config::load(&temp_config(tmp2.path(), "fixture-1")).map_err(|e| e.to_string())?;
    let mut store2 = Store::open(&cfg2.store_dir()).map_err(|e| e.to_string())?;
    let r = run_pipeline(&bad_feed, &pipeline, &mut store2, &IngestOptions::default()).map_err(|e| e.to_string())?;
    check(
        r.extracted + r.gated_out == 19 && r.rejected == 1 && r.failure_samples.len() == 1,
        || format!("malformed feed {r:?}"),
    )?;

    let tmp3 = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let (_, report, api) = ingest_fixture(tmp3.path());
    let addr = spawn_server(std::sync::Arc::new(api));
    let client = reqwest::blocking::Client::new();
    let search: serde_json::Value = client
        .post(format!("http://{addr}/search"))
        .json(&serde_json::json!({"population": {"concepts": ["M011"], "mode": "or"}}))
        .send()
        .map_err(|e| e.to_string())?
        .json()
        .map_err(|e| e.to_string())?;
    let map: serde_json::Value = client
        .post(format!("http://{addr}/map"))
        .json(&serde_json::json!({"population": {"concepts": ["M011"], "mode": "or"}}))
        .send()
        .map_err(|e| e.to_string())?
        .json()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let total = search["total"].as_u64().unwrap_or(0);
    let cells = map["cells"].as_array().map(Vec::len).unwrap_or(0);
    check(total > 0 && cells > 0, || format!("search {search} map {map}"))?;
    check(elapsed < Duration::from_secs(5), || format!("round trip took {elapsed:?}"))?;
    Ok(format!(
        "first run {} extracted/{} gated out, re-run unchanged and byte-identical; malformed feed 19+1; round trip {total} docs, {cells} cells in {:.2}s",
        first.extracted,
        first.gated_out,
        elapsed.as_secs_f64()
    ) + &format!(" ({} received)", report.received))
}

fn verify_offsets(original: &str, exp: &Expansion, pairs: &[(String, String)]) -> Result<(), String> {
    let m = &exp.offset_map;
    let expanded = &exp.document.abstract_text;
    let (oi, ei) = (CharIndex::new(original), CharIndex::new(expanded));
    check(m.original_len == oi.len() && m.expanded_len == ei.len(), || "map lengths".into())?;
    let (mut o, mut e) = (0, 0);
    for s in &m.segments {
        check(s.original_start == o && s.expanded_start == e, || format!("gap at {s:?}"))?;
        let os = oi.slice(original, s.original_start, s.original_end).ok_or("bad original range")?;
        let es = ei.slice(expanded, s.expanded_start, s.expanded_end).ok_or("bad expanded range")?;
        if s.replaced {
            check(pairs.iter().any(|(sf, lf)| sf == os && lf == es), || format!("{os:?} -> {es:?} is not a pair"))?;
        } else {
            check(os == es, || format!("copied segment differs: {os:?} vs {es:?}"))?;
            for k in s.expanded_start..s.expanded_end {
                check(m.to_original(k) == s.original_start + (k - s.expanded_start), || "to_original".into())?;
            }
        }
        o = s.original_end;
        e = s.expanded_end;
    }
    check(o == m.original_len && e == m.expanded_len, || "segments do not cover the texts".into())
}

// 9. Canonical abbreviation cases; expansion idempotent with a consistent offset map.
fn criterion_9() -> Outcome {
    let tsv = fs::read_to_string(fixture("abbreviations.tsv")).unwrap();
    let mut cases = 0;
    for line in tsv.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let (context, short, long) = (cols[0], cols.get(1).copied().unwrap_or(""), cols.get(2).copied().unwrap_or(""));
        let found: Vec<(String, String)> =
            detect_in_text(context).into_iter().map(|p| (p.short_form, p.long_form)).collect();
        if short.is_empty() {
            check(found.is_empty(), || format!("false definition {found:?} in {context:?}"))?;
        } else {
            check(found == vec![(short.to_string(), long.to_string())], || format!("{context:?}: got {found:?}"))?;
        }
        cases += 1;
    }
    let mut expanded_docs = 0;
    for g in gold_corpus() {
        let doc = &g.document;
        let (pairs, exp) = preprocess(doc);
        let pair_forms: Vec<(String, String)> = pairs.iter().map(|p| (p.short_form.clone(), p.long_form.clone())).collect();
        verify_offsets(&doc.abstract_text, &exp, &pair_forms).map_err(|e| format!("{}: {e}", doc.doc_id))?;
        let (_, twice) = preprocess(&exp.document);
        check(twice.document == exp.document, || format!("{}: second expansion changed the text", doc.doc_id))?;
        if !exp.offset_map.is_identity() {
            expanded_docs += 1;
        }
    }
    Ok(format!("{cases}/{cases} canonical cases; 20 documents idempotent ({expanded_docs} rewritten)"))
}

fn perfect_predictions(gold: &[evidence_atlas::corpus::GoldDocument]) -> BTreeMap<String, PredictionRecord> {
    gold.iter()
        .map(|g| {
            let rec = PredictionRecord {
                doc_id: g.document.doc_id.clone(),
                pico_spans: gold_spans(g),
                evidence_sentence_indices: g.gold.evidence_sentence_indices.clone(),
                triplets: g
                    .gold
                    .triplets
                    .iter()
                    .map(|t| TripletPrediction {
                        intervention: SpanRef::Flat(t.intervention.clone()),
                        comparator: SpanRef::Flat(t.comparator.clone()),
                        outcome: SpanRef::Flat(t.outcome.clone()),
                        evidence_sentence_index: t.evidence_sentence_index,
                        direction: t.direction,
                    })
                    .collect(),
                concept_ids: Some(g.gold.concept_ids.clone()),
                concepts: None,
            };
            (rec.doc_id.clone(), rec)
        })
        .collect()
}

fn full_report(
    gold: &[evidence_atlas::corpus::GoldDocument],
    preds: &BTreeMap<String, PredictionRecord>,
) -> Result<EvalReport, String> {
    let ont = ontology();
    let dict = dictionary(&ont);
    Ok(EvalReport {
        pico: Some(pico_report(gold, preds, &DEFAULT_MACRO_LABELS)),
        evidence: Some(evidence_report(gold, preds)),
        direction: Some(direction_report(gold, preds, PromptMode::PredictedPrompts)),
        concepts: Some(
            concept_report(gold, preds, &ont, Some(&dict), true, ConceptSource::Predicted).map_err(|e| e.to_string())?,
        ),
    })
}

// 10. Report structure and values on perfect and on pipeline predictions.
fn criterion_10() -> Outcome {
    let gold = gold_corpus();
    let perfect = full_report(&gold, &perfect_predictions(&gold))?;
    let pico = perfect.pico.as_ref().unwrap();
    check(
        pico.rows.iter().map(|r| r.label).collect::<Vec<_>>() == PicoLabel::ALL.to_vec(),
        || "PICO rows".into(),
    )?;
    check(pico.macro_labels == DEFAULT_MACRO_LABELS.to_vec(), || "macro labels".into())?;
    check(
        pico.rows.iter().all(|r| prf_is(&r.token, 1.0, 1.0) && prf_is(&r.entity, 1.0, 1.0))
            && close(pico.macro_token.f1, 1.0, 1e-12)
            && close(pico.macro_entity.f1, 1.0, 1e-12),
        || format!("perfect PICO not 1.0: {pico:?}"),
    )?;
    check(prf_is(perfect.evidence.as_ref().unwrap(), 1.0, 1.0), || "perfect evidence".into())?;
    let dir = perfect.direction.as_ref().unwrap();
    check(
        dir.classes.iter().map(|c| c.0).collect::<Vec<_>>() == Direction::CLASSES.to_vec()
            && dir.classes.iter().all(|(_, p)| prf_is(p, 1.0, 1.0)),
        || format!("perfect direction {dir:?}"),
    )?;
    let c = perfect.concepts.as_ref().unwrap();
    let avg_gold = gold.iter().map(|g| g.gold.concept_ids.len()).sum::<usize>() as f64 / gold.len() as f64;
    let relaxed = c.relaxed.as_ref().ok_or("no relaxed block")?;
    check(
        prf_is(&c.strict.prf, 1.0, 1.0)
            && prf_is(&relaxed.prf, 1.0, 1.0)
            && close(c.strict.avg_gold_count, avg_gold, 1e-12)
            && close(c.strict.avg_pred_count, avg_gold, 1e-12)
            && c.top_errors.under_predicted.is_empty()
            && c.top_errors.over_predicted.is_empty(),
        || format!("perfect concepts {c:?}"),
    )?;

    // pipeline output as predictions: independent evidence score and tally shape
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, _, _) = ingest_fixture(tmp.path());
    let preds = evidence_atlas::eval::report::load_predictions(&cfg.store_dir().join(EXTRACTIONS_FILE))?;
    let report = full_report(&gold, &preds)?;
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for g in &gold {
        let p = preds.get(&g.document.doc_id).map(|r| r.evidence_sentence_indices.clone()).unwrap_or_default();
        tp += p.intersection(&g.gold.evidence_sentence_indices).count();
        np += p.len();
        ng += g.gold.evidence_sentence_indices.len();
    }
    let ev = report.evidence.as_ref().unwrap();
    check(
        close(ev.precision, tp as f64 / np as f64, 1e-12) && close(ev.recall, tp as f64 / ng as f64, 1e-12),
        || format!("evidence {ev:?} vs {tp}/{np}/{ng}"),
    )?;
    let c = report.concepts.as_ref().unwrap();
    let tallies = [&c.top_errors.under_predicted, &c.top_errors.over_predicted];
    check(
        tallies
            .iter()
            .all(|t| t.len() <= TOP_ERRORS && t.windows(2).all(|w| w[0].count >= w[1].count)),
        || format!("tallies {:?}", c.top_errors),
    )?;
    let md = report.to_markdown();
    for heading in ["## PICO spans", "## Evidence sentences", "## Direction", "## Concepts", "## Most frequent concept errors"] {
        check(md.contains(heading), || format!("markdown lacks {heading}"))?;
    }
    let json = serde_json::to_string(&report).unwrap();
    let back: EvalReport = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    check(back == report, || "report JSON does not round-trip".into())?;
    Ok(format!(
        "perfect predictions score 1.0 everywhere; pipeline predictions: evidence F1 {:.3}, concepts strict F1 {:.3}, relaxed F1 {:.3}",
        ev.f1,
        c.strict.prf.f1,
        c.relaxed.as_ref().map(|r| r.prf.f1).unwrap_or(0.0)
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("dictionary matching vs brute force", criterion_1),
        ("relaxed concept scores dominate strict", criterion_2),
        ("metric micro-fixtures", criterion_3),
        ("gradient check and toy convergence", criterion_4),
        ("training-set builders", criterion_5),
        ("ICO assembly with oracle models", criterion_6),
        ("evidence map aggregation and filtering", criterion_7),
        ("ingest idempotence, isolation, round trip", criterion_8),
        ("abbreviation detection and expansion", criterion_9),
        ("evaluation report", criterion_10),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => {
                println!("criterion {n:>2} FAIL  {name}: {why}");
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
