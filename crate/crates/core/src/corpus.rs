//! Documents, sentences, spans, the corpus feed reader and the gold-annotation format.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::{char_len, CharIndex};

const EXCEPTIONS: &str = include_str!("segment_exceptions.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("missing doc_id")]
    MissingDocId,
    #[error("empty doc_id")]
    EmptyDocId,
    #[error("missing abstract")]
    MissingAbstract,
    #[error("duplicate doc_id {0}")]
    DuplicateDocId(String),
    #[error("{doc_id}: {what} [{start}, {end}) out of bounds (abstract has {len} chars)")]
    OutOfBounds {
        doc_id: String,
        what: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("{doc_id}: span [{start}, {end}) text {given:?} does not match abstract text {actual:?}")]
    TextMismatch {
        doc_id: String,
        start: usize,
        end: usize,
        given: String,
        actual: String,
    },
    #[error("{doc_id}: sentence index {index} does not exist ({count} sentences)")]
    BadSentenceIndex {
        doc_id: String,
        index: usize,
        count: usize,
    },
    #[error("gold annotations reference unknown document {0}")]
    UnknownDocument(String),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// A character range with its text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub text: String,
}

impl TokenSpan {
    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn within(&self, start: usize, end: usize) -> bool {
        self.start >= start && self.end <= end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// A trial abstract with its sentence structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub sentences: Vec<Sentence>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// One line of the corpus feed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        abstract_text: impl Into<String>,
        meta: BTreeMap<String, String>,
    ) -> Self {
        let abstract_text = abstract_text.into();
        let sentences = segment_sentences(&abstract_text);
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            abstract_text,
            sentences,
            meta,
        }
    }

    pub fn char_len(&self) -> usize {
        char_len(&self.abstract_text)
    }

    /// Build a span over `[start, end)` of the abstract.
    pub fn span(&self, start: usize, end: usize) -> Option<TokenSpan> {
        if end <= start {
            return None;
        }
        crate::text::char_slice(&self.abstract_text, start, end).map(|t| TokenSpan {
            start,
            end,
            text: t.to_string(),
        })
    }

    /// The sentence that fully contains `[start, end)`.
    pub fn sentence_containing(&self, start: usize, end: usize) -> Option<&Sentence> {
        self.sentences
            .iter()
            .find(|s| s.start <= start && end <= s.end)
    }

    pub fn to_record(&self) -> CorpusRecord {
        CorpusRecord {
            doc_id: self.doc_id.clone(),
            title: self.title.clone(),
            abstract_text: self.abstract_text.clone(),
            meta: self.meta.clone(),
        }
    }
}

impl From<CorpusRecord> for Document {
    fn from(r: CorpusRecord) -> Self {
        Document::new(r.doc_id, r.title, r.abstract_text, r.meta)
    }
}

/// Parse one feed record. Accepts `id` as an alias of `doc_id`.
pub fn parse_corpus_record(raw: &str) -> Result<Document, CorpusError> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| CorpusError::Malformed("record is not an object".into()))?;
    let doc_id = match obj.get("doc_id").or_else(|| obj.get("id")) {
        None | Some(Value::Null) => return Err(CorpusError::MissingDocId),
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err(CorpusError::Malformed("doc_id must be a string".into())),
    };
    if doc_id.is_empty() {
        return Err(CorpusError::EmptyDocId);
    }
    let abstract_text = match obj.get("abstract") {
        None | Some(Value::Null) => return Err(CorpusError::MissingAbstract),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(CorpusError::Malformed("abstract must be a string".into())),
    };
    let title = match obj.get("title") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(CorpusError::Malformed("title must be a string".into())),
    };
    let mut meta = BTreeMap::new();
    match obj.get("meta") {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (k, v) in m {
                let s = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                meta.insert(k.clone(), s);
            }
        }
        Some(_) => return Err(CorpusError::Malformed("meta must be an object".into())),
    }
    Ok(Document::new(doc_id, title, abstract_text, meta))
}

/// A feed line that could not be turned into a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub line: usize,
    pub doc_id: Option<String>,
    pub reason: String,
}

/// Parse a newline-delimited feed. Blank lines are ignored; bad lines are reported, not fatal.
pub fn parse_corpus(content: &str) -> (Vec<Document>, Vec<RejectedRecord>) {
    let mut docs = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_corpus_record(line) {
            Ok(doc) => {
                if seen.insert(doc.doc_id.clone()) {
                    docs.push(doc);
                } else {
                    rejected.push(RejectedRecord {
                        line: i + 1,
                        doc_id: Some(doc.doc_id.clone()),
                        reason: CorpusError::DuplicateDocId(doc.doc_id).to_string(),
                    });
                }
            }
            Err(e) => rejected.push(RejectedRecord {
                line: i + 1,
                doc_id: None,
                reason: e.to_string(),
            }),
        }
    }
    (docs, rejected)
}

pub fn read_corpus(path: &Path) -> Result<(Vec<Document>, Vec<RejectedRecord>), CorpusError> {
    let content = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(parse_corpus(&content))
}

fn exception_list() -> &'static HashSet<String> {
    static LIST: std::sync::OnceLock<HashSet<String>> = std::sync::OnceLock::new();
    LIST.get_or_init(|| {
        EXCEPTIONS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect()
    })
}

fn is_closer(c: char) -> bool {
    matches!(c, ')' | ']' | '"' | '\'' | '\u{201d}' | '\u{2019}')
}

/// Split text into sentences. A boundary is a `.`, `!` or `?` (optionally followed by
/// closing brackets or quotes), then whitespace, then an uppercase letter. Periods that
/// end a listed abbreviation never split. Sentence ranges exclude surrounding whitespace.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut ends = Vec::new();
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < n && is_closer(chars[j]) {
                j += 1;
            }
            let mut k = j;
            while k < n && chars[k].is_whitespace() {
                k += 1;
            }
            if k > j && k < n && chars[k].is_uppercase() && !(c == '.' && ends_with_exception(&chars, i)) {
                ends.push(j);
                i = k;
                continue;
            }
        }
        i += 1;
    }
    ends.push(n);

    let index = CharIndex::new(text);
    let mut out = Vec::new();
    let mut start = 0;
    for end in ends {
        let mut s = start;
        while s < end && chars[s].is_whitespace() {
            s += 1;
        }
        let mut e = end;
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if e > s {
            out.push(Sentence {
                index: out.len(),
                start: s,
                end: e,
                text: index.slice(text, s, e).unwrap_or_default().to_string(),
            });
        }
        start = end;
    }
    out
}

/// Whether the whitespace-delimited word ending at `period` (inclusive) is a listed exception.
fn ends_with_exception(chars: &[char], period: usize) -> bool {
    let mut s = period;
    while s > 0 && !chars[s - 1].is_whitespace() && chars[s - 1] != '(' {
        s -= 1;
    }
    let word: String = chars[s..=period].iter().collect::<String>().to_lowercase();
    exception_list().contains(&word)
}

// ---------------------------------------------------------------------------
// Gold annotations

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PicoLabel {
    Population,
    Intervention,
    Outcome,
}

impl PicoLabel {
    pub const ALL: [PicoLabel; 3] = [
        PicoLabel::Population,
        PicoLabel::Intervention,
        PicoLabel::Outcome,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PicoLabel::Population => "Population",
            PicoLabel::Intervention => "Intervention",
            PicoLabel::Outcome => "Outcome",
        }
    }
}

impl fmt::Display for PicoLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PicoLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "population" | "participants" | "p" => Ok(PicoLabel::Population),
            "intervention" | "interventions" | "i" => Ok(PicoLabel::Intervention),
            "outcome" | "outcomes" | "o" => Ok(PicoLabel::Outcome),
            _ => Err(format!("unknown label '{s}'")),
        }
    }
}

/// Reported movement of an outcome in the intervention arm relative to the comparator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increased,
    Decreased,
    NoDifference,
    /// The direction model failed; never counted in maps or scores.
    Unknown,
}

impl Direction {
    /// The three real classes, in the order used by direction probability vectors.
    pub const CLASSES: [Direction; 3] = [
        Direction::Increased,
        Direction::Decreased,
        Direction::NoDifference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Increased => "increased",
            Direction::Decreased => "decreased",
            Direction::NoDifference => "no_difference",
            Direction::Unknown => "unknown",
        }
    }

    /// Parse one of the three gold classes. `unknown` is rejected.
    pub fn parse_gold(s: &str) -> Result<Direction, String> {
        match s {
            "increased" => Ok(Direction::Increased),
            "decreased" => Ok(Direction::Decreased),
            "no_difference" => Ok(Direction::NoDifference),
            other => Err(format!("unknown direction '{other}'")),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGoldSpan")]
pub struct GoldSpan {
    pub label: PicoLabel,
    #[serde(flatten)]
    pub span: TokenSpan,
}

#[derive(Deserialize)]
struct RawGoldSpan {
    label: String,
    start: usize,
    end: usize,
    #[serde(default)]
    text: String,
}

impl TryFrom<RawGoldSpan> for GoldSpan {
    type Error = String;

    fn try_from(r: RawGoldSpan) -> Result<Self, Self::Error> {
        Ok(GoldSpan {
            label: r.label.parse()?,
            span: TokenSpan {
                start: r.start,
                end: r.end,
                text: r.text,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGoldTriplet")]
pub struct GoldTriplet {
    pub intervention: TokenSpan,
    pub comparator: TokenSpan,
    pub outcome: TokenSpan,
    pub evidence_sentence_index: usize,
    pub direction: Direction,
}

#[derive(Deserialize)]
struct RawGoldTriplet {
    intervention: TokenSpan,
    comparator: TokenSpan,
    outcome: TokenSpan,
    evidence_sentence_index: usize,
    direction: String,
}

impl TryFrom<RawGoldTriplet> for GoldTriplet {
    type Error = String;

    fn try_from(r: RawGoldTriplet) -> Result<Self, Self::Error> {
        Ok(GoldTriplet {
            intervention: r.intervention,
            comparator: r.comparator,
            outcome: r.outcome,
            evidence_sentence_index: r.evidence_sentence_index,
            direction: Direction::parse_gold(&r.direction)?,
        })
    }
}

/// Expert annotations for one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotations {
    pub doc_id: String,
    #[serde(default)]
    pub pico_spans: Vec<GoldSpan>,
    #[serde(default)]
    pub evidence_sentence_indices: BTreeSet<usize>,
    #[serde(default)]
    pub triplets: Vec<GoldTriplet>,
    #[serde(default)]
    pub concept_ids: BTreeSet<String>,
}

impl GoldAnnotations {
    /// Check every reference against `doc`, filling in missing span texts.
    pub fn validate(mut self, doc: &Document) -> Result<GoldAnnotations, CorpusError> {
        let idx = CharIndex::new(&doc.abstract_text);
        let fix = |span: &mut TokenSpan, what: &str| -> Result<(), CorpusError> {
            let actual = if span.end > span.start {
                idx.slice(&doc.abstract_text, span.start, span.end)
            } else {
                None
            };
            let Some(actual) = actual else {
                return Err(CorpusError::OutOfBounds {
                    doc_id: doc.doc_id.clone(),
                    what: what.to_string(),
                    start: span.start,
                    end: span.end,
                    len: idx.len(),
                });
            };
            if span.text.is_empty() {
                span.text = actual.to_string();
            } else if span.text != actual {
                return Err(CorpusError::TextMismatch {
                    doc_id: doc.doc_id.clone(),
                    start: span.start,
                    end: span.end,
                    given: span.text.clone(),
                    actual: actual.to_string(),
                });
            }
            Ok(())
        };
        for s in &mut self.pico_spans {
            fix(&mut s.span, s.label.as_str())?;
        }
        let count = doc.sentences.len();
        let bad_index = |index: usize| CorpusError::BadSentenceIndex {
            doc_id: doc.doc_id.clone(),
            index,
            count,
        };
        if let Some(&i) = self.evidence_sentence_indices.iter().find(|&&i| i >= count) {
            return Err(bad_index(i));
        }
        for t in &mut self.triplets {
            fix(&mut t.intervention, "intervention")?;
            fix(&mut t.comparator, "comparator")?;
            fix(&mut t.outcome, "outcome")?;
            if t.evidence_sentence_index >= count {
                return Err(bad_index(t.evidence_sentence_index));
            }
        }
        Ok(self)
    }
}

/// Parse gold annotations (one object per line) and validate them against `docs`.
pub fn parse_gold(
    content: &str,
    docs: &HashMap<String, Document>,
) -> Result<BTreeMap<String, GoldAnnotations>, CorpusError> {
    let mut out = BTreeMap::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: CorpusError| CorpusError::AtLine {
            line: i + 1,
            source: Box::new(e),
        };
        let gold: GoldAnnotations =
            serde_json::from_str(line).map_err(|e| at(CorpusError::Malformed(e.to_string())))?;
        let doc = docs
            .get(&gold.doc_id)
            .ok_or_else(|| at(CorpusError::UnknownDocument(gold.doc_id.clone())))?;
        let gold = gold.validate(doc).map_err(at)?;
        if out.contains_key(&gold.doc_id) {
            return Err(at(CorpusError::DuplicateDocId(gold.doc_id)));
        }
        out.insert(gold.doc_id.clone(), gold);
    }
    Ok(out)
}

pub fn load_gold(
    path: &Path,
    docs: &HashMap<String, Document>,
) -> Result<BTreeMap<String, GoldAnnotations>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_gold(&content, docs)
}

/// A document paired with its gold annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldDocument {
    pub document: Document,
    pub gold: GoldAnnotations,
}

/// Load a corpus feed and its gold file; documents without gold are dropped.
/// Order follows the corpus file.
pub fn load_gold_corpus(corpus: &Path, gold: &Path) -> Result<Vec<GoldDocument>, CorpusError> {
    let (docs, rejected) = read_corpus(corpus)?;
    if let Some(r) = rejected.first() {
        return Err(CorpusError::AtLine {
            line: r.line,
            source: Box::new(CorpusError::Malformed(r.reason.clone())),
        });
    }
    let by_id: HashMap<String, Document> =
        docs.iter().map(|d| (d.doc_id.clone(), d.clone())).collect();
    let mut golds = load_gold(gold, &by_id)?;
    Ok(docs
        .into_iter()
        .filter_map(|d| {
            golds.remove(&d.doc_id).map(|g| GoldDocument {
                document: d,
                gold: g,
            })
        })
        .collect())
}
