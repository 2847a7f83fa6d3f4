use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use evidence_atlas::classify::{train, ClassifierHandle, LabeledExample, Task, TrainConfig};
use evidence_atlas::corpus::{load_gold_corpus, read_corpus};
use evidence_atlas::eval::report::{
    concept_report, direction_report, evidence_report, load_predictions, pico_report, ConceptSource,
    EvalReport, DEFAULT_MACRO_LABELS,
};
use evidence_atlas::eval::PromptMode;
use evidence_atlas::evidence::{
    build_evidence_training_set, direction_examples, generate_relation_negatives, relation_positives,
    NegativeConfig, DEFAULT_LENGTH_TOLERANCE,
};
use evidence_atlas::evidence_map::Query;
use evidence_atlas::gate::gate;
use evidence_atlas::normalize::{build_dictionary, load_synonyms, Ontology, SynonymDictionary};
use evidence_atlas::service::http;
use evidence_atlas::service::pipeline::{load_dictionary, parse_timestamp};
use evidence_atlas::service::{run_pipeline, Api, Config, IngestOptions, Pipeline, Snapshot, Store};
use evidence_atlas::text::NormalizeConfig;

#[derive(Parser)]
#[command(name = "evidence-atlas", version, about = "Evidence extraction from trial abstracts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a feed through the pipeline into the store.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        feed: PathBuf,
        /// Skip records stamped before this date or RFC 3339 instant.
        #[arg(long)]
        since: Option<String>,
    },
    /// Serve the HTTP API over the store.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Seconds between checks for a newer store; 0 disables reloading.
        #[arg(long, default_value_t = 5)]
        reload_secs: u64,
    },
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
    /// Build the synonym dictionary from an ontology and synonym table.
    BuildDict {
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Strip plural endings when normalizing.
        #[arg(long)]
        stem: bool,
    },
    /// Train a linear classifier.
    Train(TrainArgs),
    /// Write the evidence map for a query as JSON.
    ExportMap {
        #[arg(long)]
        config: PathBuf,
        /// Query JSON, inline or a path to a file.
        #[arg(long)]
        query: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print gate decisions for a feed without storing anything.
    Gate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        feed: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SpanSourceArg {
    Gold,
    Predicted,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Prediction JSONL; extraction records from the store are accepted.
    #[arg(long)]
    predictions: PathBuf,
    /// Needed for the concept tables.
    #[arg(long)]
    ontology: Option<PathBuf>,
    #[arg(long)]
    synonyms: Option<PathBuf>,
    /// Dictionary JSON from build-dict; takes precedence over --synonyms.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long)]
    relaxed: bool,
    #[arg(long, value_enum, default_value = "predicted")]
    span_source: SpanSourceArg,
    /// Score directions only on gold-matched items.
    #[arg(long)]
    gold_prompts: bool,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    task: Task,
    /// JSONL of {"segments": [...], "label": "..."}.
    #[arg(long)]
    examples: Option<PathBuf>,
    /// Gold corpus for the evidence, role and direction builders.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-6)]
    l2: f64,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[arg(long)]
    full_batch: bool,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { config, feed, since } => {
            let cfg = Config::load(&config)?;
            let since = match since {
                Some(s) => Some(parse_timestamp(&s).with_context(|| format!("bad --since {s:?}"))?),
                None => None,
            };
            let pipeline = Pipeline::from_config(&cfg)?;
            let mut store = Store::open(&cfg.store_dir())?;
            let report = run_pipeline(&feed, &pipeline, &mut store, &IngestOptions { since, now: None })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Serve {
            config,
            port,
            host,
            reload_secs,
        } => serve(&config, &host, port, reload_secs)?,
        Command::Eval(args) => eval(args)?,
        Command::BuildDict {
            ontology,
            synonyms,
            out,
            stem,
        } => {
            let ont = Ontology::load(&ontology)?;
            let rows = match synonyms {
                Some(p) => load_synonyms(&p)?,
                None => Vec::new(),
            };
            let (dict, rejected) = build_dictionary(&ont, &rows, NormalizeConfig { stem });
            for r in &rejected {
                eprintln!("skipped {} {:?}: {}", r.row.concept_id, r.row.synonym, r.reason);
            }
            fs::write(&out, serde_json::to_string(&dict.to_file())?)
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!("{} keys written to {}", dict.len(), out.display());
        }
        Command::Train(args) => train_cmd(args)?,
        Command::ExportMap { config, query, out } => {
            let cfg = Config::load(&config)?;
            let text = if Path::new(&query).is_file() {
                fs::read_to_string(&query)?
            } else {
                query
            };
            let q: Query = serde_json::from_str(&text).context("parsing query")?;
            let api = Api::new(snapshot(&cfg)?);
            let bytes = api.map_json(&q).map_err(|e| anyhow::anyhow!("{}: {}", e.code, e.message))?;
            match out {
                Some(p) => fs::write(&p, bytes.as_slice())?,
                None => println!("{}", String::from_utf8_lossy(&bytes)),
            }
        }
        Command::Gate { config, feed } => {
            let cfg = Config::load(&config)?;
            let clf = ClassifierHandle::load(&cfg.model_location(&cfg.models.rct), Task::Rct)?;
            let (docs, rejected) = read_corpus(&feed)?;
            for r in rejected {
                eprintln!("line {}: {}", r.line, r.reason);
            }
            for d in docs {
                println!("{}", serde_json::to_string(&gate(&d, &clf, cfg.thresholds.gate)?)?);
            }
        }
    }
    Ok(())
}

fn snapshot(cfg: &Config) -> Result<Snapshot> {
    let ontology = Ontology::load(&cfg.resolve(&cfg.paths.ontology))?;
    let dict = load_dictionary(cfg, &ontology)?;
    let store = Store::open(&cfg.store_dir())?;
    store.check_consistency()?;
    Ok(Snapshot::new(&store, ontology, &dict, cfg.api))
}

fn serve(config: &Path, host: &str, port: u16, reload_secs: u64) -> Result<()> {
    let cfg = Config::load(config)?;
    let api = Arc::new(Api::new(snapshot(&cfg)?));
    let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host/port")?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        if reload_secs > 0 {
            let watched = cfg.store_dir().join(evidence_atlas::service::store::JOURNAL_FILE);
            let cfg2 = cfg.clone();
            tokio::spawn(http::watch_store(
                api.clone(),
                watched,
                Duration::from_secs(reload_secs),
                move || match snapshot(&cfg2) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        log::warn!("reload skipped: {e:#}");
                        None
                    }
                },
            ));
        }
        http::serve(api, addr, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let gold = load_gold_corpus(&a.corpus, &a.gold)?;
    let preds = load_predictions(&a.predictions).map_err(anyhow::Error::msg)?;
    let mode = if a.gold_prompts {
        PromptMode::GoldPrompts
    } else {
        PromptMode::PredictedPrompts
    };
    let mut report = EvalReport {
        pico: Some(pico_report(&gold, &preds, &DEFAULT_MACRO_LABELS)),
        evidence: Some(evidence_report(&gold, &preds)),
        direction: Some(direction_report(&gold, &preds, mode)),
        concepts: None,
    };
    if let Some(onto_path) = &a.ontology {
        let ontology = Ontology::load(onto_path)?;
        let dict: Option<SynonymDictionary> = match (&a.dictionary, &a.synonyms) {
            (Some(p), _) => Some(SynonymDictionary::from_file(serde_json::from_str(&fs::read_to_string(p)?)?)),
            (None, Some(p)) => Some(build_dictionary(&ontology, &load_synonyms(p)?, NormalizeConfig::default()).0),
            (None, None) => None,
        };
        let source = match a.span_source {
            SpanSourceArg::Gold => ConceptSource::Gold,
            SpanSourceArg::Predicted => ConceptSource::Predicted,
        };
        report.concepts = Some(concept_report(&gold, &preds, &ontology, dict.as_ref(), a.relaxed, source)?);
    }
    let text = match a.format {
        Format::Json => serde_json::to_string_pretty(&report)?,
        Format::Markdown => report.to_markdown(),
    };
    match a.out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Deserialize)]
struct ExampleLine {
    segments: Vec<String>,
    label: String,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let labels = a.task.labels();
    let mut examples: Vec<LabeledExample> = Vec::new();
    if let Some(p) = &a.examples {
        for (i, line) in fs::read_to_string(p)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ExampleLine = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
            let Some(k) = labels.iter().position(|l| *l == e.label) else {
                bail!("line {}: label {:?} is not one of {:?}", i + 1, e.label, labels);
            };
            examples.push(LabeledExample::new(e.segments, k));
        }
    }
    if let (Some(c), Some(g)) = (&a.corpus, &a.gold) {
        let gold = load_gold_corpus(c, g)?;
        match a.task {
            Task::Evidence => {
                let set = build_evidence_training_set(&gold, DEFAULT_LENGTH_TOLERANCE, a.seed);
                for w in &set.warnings {
                    log::warn!("{w:?}");
                }
                examples.extend(set.examples);
            }
            Task::Role => {
                examples.extend(relation_positives(&gold));
                let cfg = NegativeConfig {
                    seed: a.seed,
                    ..NegativeConfig::default()
                };
                examples.extend(generate_relation_negatives(&gold, &cfg).into_iter().map(|n| n.example));
            }
            Task::Direction => examples.extend(direction_examples(&gold)),
            Task::Rct => bail!("the rct task needs --examples"),
        }
    }
    if examples.is_empty() {
        bail!("no training examples; pass --examples or --corpus with --gold");
    }
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        l2: a.l2,
        seed: a.seed,
        full_batch: a.full_batch,
        ..TrainConfig::default()
    };
    let model = train(a.task.name(), &labels, &examples, &cfg)?;
    if let Some(loss) = model.meta.loss_history.last() {
        eprintln!("trained on {} examples, final loss {loss:.4}", examples.len());
    }
    ClassifierHandle::Linear(model).save(&a.out)?;
    Ok(())
}
