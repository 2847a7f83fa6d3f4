//! Population, Intervention and Outcome span tagging.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::remote::{RemoteClient, RemoteSpec};
use crate::classify::ClassifyError;
use crate::corpus::{Document, GoldAnnotations, PicoLabel, TokenSpan};
use crate::text::{word_tokens, CharIndex, NormalizeConfig, Token};
use crate::trie::TokenTrie;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanSource {
    Gazetteer,
    Model,
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicoSpan {
    pub label: PicoLabel,
    pub span: TokenSpan,
    pub confidence: f64,
    pub source: SpanSource,
}

impl PicoSpan {
    pub fn new(label: PicoLabel, span: TokenSpan, confidence: f64, source: SpanSource) -> Self {
        PicoSpan {
            label,
            span,
            confidence,
            source,
        }
    }

    pub fn text(&self) -> &str {
        &self.span.text
    }
}

#[derive(Debug, Error)]
pub enum TagError {
    #[error("gazetteer line {line}: {reason}")]
    Gazetteer { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("tagger backend failed: {0}")]
    Backend(#[from] ClassifyError),
}

/// Per-label term lists keyed by normalized token sequences.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    tries: BTreeMap<PicoLabel, TokenTrie<String>>,
    pub normalize: NormalizeConfig,
}

impl Gazetteer {
    pub fn new(normalize: NormalizeConfig) -> Self {
        Gazetteer {
            tries: BTreeMap::new(),
            normalize,
        }
    }

    /// Add a term. Terms without any word token are refused.
    pub fn insert(&mut self, label: PicoLabel, term: &str) -> bool {
        let key = self.normalize.key_tokens(term);
        if key.is_empty() {
            return false;
        }
        let joined = key.join(" ");
        self.tries.entry(label).or_default().insert(&key, joined);
        true
    }

    pub fn contains(&self, label: PicoLabel, term: &str) -> bool {
        let key = self.normalize.key_tokens(term);
        self.tries
            .get(&label)
            .is_some_and(|t| t.get(&key).is_some())
    }

    pub fn len(&self) -> usize {
        self.tries.values().map(TokenTrie::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalized keys of one label.
    pub fn terms(&self, label: PicoLabel) -> Vec<String> {
        self.tries
            .get(&label)
            .map(|t| t.entries().into_iter().map(|(k, _)| k.join(" ")).collect())
            .unwrap_or_default()
    }

    /// Parse `label<TAB>term` lines. Blank lines and `#` comments are skipped.
    pub fn parse(content: &str, normalize: NormalizeConfig) -> Result<Self, TagError> {
        let mut g = Gazetteer::new(normalize);
        for (i, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| TagError::Gazetteer {
                line: i + 1,
                reason,
            };
            let (label, term) = line
                .split_once('\t')
                .ok_or_else(|| err("expected label<TAB>term".into()))?;
            let label: PicoLabel = label.trim().parse().map_err(err)?;
            if !g.insert(label, term) {
                return Err(err(format!("empty term {term:?}")));
            }
        }
        Ok(g)
    }

    pub fn load(path: &Path, normalize: NormalizeConfig) -> Result<Self, TagError> {
        let content = fs::read_to_string(path).map_err(|e| TagError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&content, normalize)
    }

    /// Leftmost-longest matches of each label over the document tokens.
    pub fn scan(&self, text: &str) -> Vec<PicoSpan> {
        let tokens = word_tokens(text);
        let keys: Vec<String> = tokens.iter().map(|t| self.normalize.token(&t.norm)).collect();
        let index = CharIndex::new(text);
        let mut out = Vec::new();
        for (&label, trie) in &self.tries {
            for m in trie.scan(&keys) {
                let (s, e) = (tokens[m.first].start, tokens[m.last - 1].end);
                out.push(PicoSpan::new(
                    label,
                    span_of(text, &index, s, e),
                    1.0,
                    SpanSource::Gazetteer,
                ));
            }
        }
        out
    }
}

fn span_of(text: &str, index: &CharIndex, start: usize, end: usize) -> TokenSpan {
    TokenSpan {
        start,
        end,
        text: index.slice(text, start, end).unwrap_or_default().to_string(),
    }
}

pub trait TaggerBackend: Send + Sync {
    fn tag(&self, doc: &Document) -> Result<Vec<PicoSpan>, TagError>;

    /// Spans refer to the document as stored, not to its abbreviation-expanded form.
    fn original_coordinates(&self) -> bool {
        false
    }
}

/// Tags nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullTagger;

impl TaggerBackend for NullTagger {
    fn tag(&self, _doc: &Document) -> Result<Vec<PicoSpan>, TagError> {
        Ok(Vec::new())
    }
}

/// Replays expert spans.
#[derive(Debug, Clone, Default)]
pub struct GoldTagger {
    spans: HashMap<String, Vec<PicoSpan>>,
}

impl GoldTagger {
    pub fn new<'a>(gold: impl IntoIterator<Item = &'a GoldAnnotations>) -> Self {
        let spans = gold
            .into_iter()
            .map(|g| {
                let v = g
                    .pico_spans
                    .iter()
                    .map(|s| PicoSpan::new(s.label, s.span.clone(), 1.0, SpanSource::Gold))
                    .collect();
                (g.doc_id.clone(), v)
            })
            .collect();
        GoldTagger { spans }
    }
}

impl TaggerBackend for GoldTagger {
    fn tag(&self, doc: &Document) -> Result<Vec<PicoSpan>, TagError> {
        Ok(self.spans.get(&doc.doc_id).cloned().unwrap_or_default())
    }

    fn original_coordinates(&self) -> bool {
        true
    }
}

/// Cue phrases whose following words are taken as a span of the given label.
const TRIGGERS: &[(PicoLabel, &[&str])] = &[
    (PicoLabel::Population, &["patients", "with"]),
    (PicoLabel::Population, &["adults", "with"]),
    (PicoLabel::Population, &["children", "with"]),
    (PicoLabel::Intervention, &["treated", "with"]),
    (PicoLabel::Intervention, &["received"]),
    (PicoLabel::Intervention, &["randomized", "to"]),
    (PicoLabel::Intervention, &["randomised", "to"]),
    (PicoLabel::Outcome, &["measured"]),
];

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "or", "the", "in", "of", "for", "was", "were", "is", "are", "at", "by",
    "with", "to", "from", "on", "who", "which", "that", "than", "versus", "vs", "compared",
];

const MAX_TRIGGER_TOKENS: usize = 4;
pub const TRIGGER_CONFIDENCE: f64 = 0.5;

/// Gazetteer lookup plus optional cue-phrase rules. Gazetteer hits carry confidence 1;
/// cue-phrase spans carry 0.5 and are only kept where no same-label gazetteer hit overlaps.
#[derive(Debug, Clone)]
pub struct GazetteerTagger {
    pub gazetteer: Gazetteer,
    pub triggers: bool,
}

impl GazetteerTagger {
    pub fn new(gazetteer: Gazetteer) -> Self {
        GazetteerTagger {
            gazetteer,
            triggers: true,
        }
    }

    pub fn without_triggers(gazetteer: Gazetteer) -> Self {
        GazetteerTagger {
            gazetteer,
            triggers: false,
        }
    }
}

fn trigger_spans(text: &str) -> Vec<PicoSpan> {
    let chars: Vec<char> = text.chars().collect();
    let tokens = word_tokens(text);
    let index = CharIndex::new(text);
    // tokens separated by anything other than whitespace belong to different phrases
    let joined = |a: &Token, b: &Token| chars[a.end..b.start].iter().all(|c| c.is_whitespace());
    let mut out = Vec::new();
    for (label, cue) in TRIGGERS {
        for i in 0..tokens.len() {
            let end = i + cue.len();
            if end >= tokens.len()
                || !tokens[i..end].iter().zip(cue.iter()).all(|(t, c)| t.norm == *c)
                || !(i + 1..=end).all(|k| joined(&tokens[k - 1], &tokens[k]))
            {
                continue;
            }
            let mut last = end;
            while last < tokens.len()
                && last - end < MAX_TRIGGER_TOKENS
                && !STOPWORDS.contains(&tokens[last].norm.as_str())
                && joined(&tokens[last - 1], &tokens[last])
            {
                last += 1;
            }
            if last > end {
                let (s, e) = (tokens[end].start, tokens[last - 1].end);
                out.push(PicoSpan::new(
                    *label,
                    span_of(text, &index, s, e),
                    TRIGGER_CONFIDENCE,
                    SpanSource::Gazetteer,
                ));
            }
        }
    }
    out
}

impl TaggerBackend for GazetteerTagger {
    fn tag(&self, doc: &Document) -> Result<Vec<PicoSpan>, TagError> {
        let mut spans = self.gazetteer.scan(&doc.abstract_text);
        if self.triggers {
            let extra: Vec<PicoSpan> = trigger_spans(&doc.abstract_text)
                .into_iter()
                .filter(|t| {
                    !spans
                        .iter()
                        .any(|g| g.label == t.label && g.span.overlaps(&t.span))
                })
                .collect();
            spans.extend(extra);
        }
        Ok(spans)
    }
}

/// Class order of the remote token tagger's per-token distributions.
pub const TOKEN_LABELS: [&str; 4] = ["O", "Population", "Intervention", "Outcome"];

/// Neural tagger behind the remote protocol. Segments are the word tokens of the
/// abstract; the response holds one distribution per token over [`TOKEN_LABELS`],
/// flattened token-major.
#[derive(Debug)]
pub struct RemoteTokenTagger {
    client: RemoteClient,
}

impl RemoteTokenTagger {
    pub fn new(url: &str) -> Result<Self, ClassifyError> {
        Ok(RemoteTokenTagger {
            client: RemoteClient::new(RemoteSpec {
                task: "pico".into(),
                labels: TOKEN_LABELS.iter().map(|s| s.to_string()).collect(),
                url: url.to_string(),
                max_in_flight: 8,
                timeout_ms: 30_000,
            })?,
        })
    }
}

/// Greedy decoding of per-token distributions: each token takes its argmax class, ties
/// going to a span label over `O`; runs of equal labels become spans whose confidence
/// is the mean winning probability.
pub fn decode_token_probs(
    text: &str,
    tokens: &[Token],
    probs: &[f64],
) -> Result<Vec<PicoSpan>, ClassifyError> {
    let k = TOKEN_LABELS.len();
    if probs.len() != tokens.len() * k {
        return Err(ClassifyError::BadResponse(format!(
            "expected {} token probabilities, got {}",
            tokens.len() * k,
            probs.len()
        )));
    }
    let index = CharIndex::new(text);
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(tokens.len());
    for row in probs.chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let class = (1..k).find(|&c| row[c] == max).unwrap_or(0);
        best.push((class, max));
    }
    let labels = [PicoLabel::Population, PicoLabel::Intervention, PicoLabel::Outcome];
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let class = best[i].0;
        let mut j = i + 1;
        while j < tokens.len() && best[j].0 == class {
            j += 1;
        }
        if class > 0 {
            let conf = best[i..j].iter().map(|b| b.1).sum::<f64>() / (j - i) as f64;
            out.push(PicoSpan::new(
                labels[class - 1],
                span_of(text, &index, tokens[i].start, tokens[j - 1].end),
                conf.clamp(0.0, 1.0),
                SpanSource::Model,
            ));
        }
        i = j;
    }
    Ok(out)
}

impl TaggerBackend for RemoteTokenTagger {
    fn tag(&self, doc: &Document) -> Result<Vec<PicoSpan>, TagError> {
        let tokens = word_tokens(&doc.abstract_text);
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let index = CharIndex::new(&doc.abstract_text);
        let segments: Vec<String> = tokens
            .iter()
            .map(|t| {
                index
                    .slice(&doc.abstract_text, t.start, t.end)
                    .unwrap_or_default()
                    .to_string()
            })
            .collect();
        let probs = self.client.post(&segments)?;
        Ok(decode_token_probs(&doc.abstract_text, &tokens, &probs)?)
    }
}

fn sort_spans(spans: &mut [PicoSpan]) {
    spans.sort_by(|a, b| {
        (a.span.start, a.span.end, a.label)
            .cmp(&(b.span.start, b.span.end, b.label))
            .then(b.confidence.total_cmp(&a.confidence))
    });
}

/// Merge same-label spans for which `joinable(prev, next)` holds, scanning in start order.
fn merge_where(
    text: &str,
    mut spans: Vec<PicoSpan>,
    joinable: impl Fn(&PicoSpan, &PicoSpan) -> bool,
) -> Vec<PicoSpan> {
    sort_spans(&mut spans);
    let index = CharIndex::new(text);
    let mut open: BTreeMap<PicoLabel, PicoSpan> = BTreeMap::new();
    let mut out = Vec::new();
    for s in spans {
        match open.get_mut(&s.label) {
            Some(cur) if joinable(cur, &s) => {
                if s.span.end > cur.span.end {
                    cur.span = span_of(text, &index, cur.span.start, s.span.end);
                }
                cur.confidence = cur.confidence.max(s.confidence);
                if s.source != cur.source {
                    cur.source = cur.source.min(s.source);
                }
            }
            _ => {
                if let Some(prev) = open.insert(s.label, s.clone()) {
                    out.push(prev);
                }
            }
        }
    }
    out.extend(open.into_values());
    sort_spans(&mut out);
    out
}

/// Tag a document: spans sorted by start, overlapping same-label spans merged.
/// Spans of different labels may nest or overlap.
pub fn tag_spans(doc: &Document, backend: &dyn TaggerBackend) -> Result<Vec<PicoSpan>, TagError> {
    let spans = backend.tag(doc)?;
    let n = doc.char_len();
    let spans: Vec<PicoSpan> = spans
        .into_iter()
        .filter(|s| s.span.end > s.span.start && s.span.end <= n)
        .collect();
    Ok(merge_where(&doc.abstract_text, spans, |a, b| {
        b.span.start < a.span.end
    }))
}

/// Join same-label spans that overlap, touch, or are separated only by whitespace
/// and hyphens into entity spans.
pub fn group_entities(text: &str, spans: &[PicoSpan]) -> Vec<PicoSpan> {
    let chars: Vec<char> = text.chars().collect();
    merge_where(text, spans.to_vec(), |a, b| {
        b.span.start <= a.span.end
            || chars
                .get(a.span.end..b.span.start)
                .is_some_and(|gap| gap.iter().all(|c| c.is_whitespace() || *c == '-'))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn doc(text: &str) -> Document {
        Document::new("d", "", text, BTreeMap::new())
    }

    fn gaz(rows: &[(PicoLabel, &str)]) -> Gazetteer {
        let mut g = Gazetteer::default();
        for (l, t) in rows {
            g.insert(*l, t);
        }
        g
    }

    #[test]
    fn gazetteer_hit() {
        let t = GazetteerTagger::new(gaz(&[(PicoLabel::Intervention, "metformin")]));
        let spans = tag_spans(&doc("Patients received metformin daily."), &t).unwrap();
        let i: Vec<_> = spans
            .iter()
            .filter(|s| s.label == PicoLabel::Intervention)
            .collect();
        assert_eq!(i.len(), 1);
        assert_eq!(i[0].span.text, "metformin");
        assert_eq!(i[0].confidence, 1.0);
    }

    #[test]
    fn longest_term_wins() {
        let t = GazetteerTagger::without_triggers(gaz(&[
            (PicoLabel::Population, "type 2 diabetes"),
            (PicoLabel::Population, "diabetes"),
        ]));
        let spans = tag_spans(&doc("Adults with type 2 diabetes."), &t).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].span.text, "type 2 diabetes");
    }

    #[test]
    fn null_tagger_is_empty() {
        assert!(tag_spans(&doc("Nothing here."), &NullTagger).unwrap().is_empty());
    }

    #[test]
    fn trigger_rules() {
        let t = GazetteerTagger::new(Gazetteer::default());
        let spans = tag_spans(&doc("We enrolled patients with chronic pain and measured sleep quality."), &t)
            .unwrap();
        let got: Vec<(PicoLabel, &str)> = spans.iter().map(|s| (s.label, s.text())).collect();
        assert_eq!(
            got,
            vec![
                (PicoLabel::Population, "chronic pain"),
                (PicoLabel::Outcome, "sleep quality"),
            ]
        );
        assert!(spans.iter().all(|s| s.confidence == TRIGGER_CONFIDENCE));
    }

    #[test]
    fn grouping_rules() {
        let text = "blood pressure and heart rate";
        let mk = |s: usize, e: usize| {
            PicoSpan::new(
                PicoLabel::Outcome,
                TokenSpan { start: s, end: e, text: text.chars().skip(s).take(e - s).collect() },
                1.0,
                SpanSource::Model,
            )
        };
        let g = group_entities(text, &[mk(0, 5), mk(6, 14)]);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].span.text, "blood pressure");
        let g = group_entities(text, &[mk(6, 14), mk(19, 24)]);
        assert_eq!(g.len(), 2);
        let g = group_entities(text, &[mk(0, 5)]);
        assert_eq!(g, vec![mk(0, 5)]);
    }

    #[test]
    fn hyphen_gap_groups() {
        let text = "progression-free survival";
        let mk = |s: usize, e: usize| {
            PicoSpan::new(
                PicoLabel::Outcome,
                TokenSpan { start: s, end: e, text: text[s..e].to_string() },
                0.8,
                SpanSource::Model,
            )
        };
        let g = group_entities(text, &[mk(0, 11), mk(12, 16), mk(17, 25)]);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].span.text, text);
    }

    #[test]
    fn token_decoding_prefers_spans_on_ties() {
        let text = "aspirin reduced pain";
        let tokens = word_tokens(text);
        let probs = vec![
            0.5, 0.0, 0.5, 0.0, // tie O / Intervention
            0.9, 0.05, 0.05, 0.0, //
            0.1, 0.0, 0.0, 0.9,
        ];
        let spans = decode_token_probs(text, &tokens, &probs).unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].label, PicoLabel::Intervention);
        assert_eq!(spans[0].span.text, "aspirin");
        assert_eq!(spans[1].span.text, "pain");
        assert!(decode_token_probs(text, &tokens, &probs[..4]).is_err());
    }

    #[test]
    fn gazetteer_file_format() {
        let g = Gazetteer::parse("# label\tterm\nOutcome\tHbA1c\nIntervention\tMetformin\n", NormalizeConfig::default())
            .unwrap();
        assert!(g.contains(PicoLabel::Outcome, "hba1c"));
        assert_eq!(g.len(), 2);
        assert!(Gazetteer::parse("Outcome\t ,\n", NormalizeConfig::default()).is_err());
        assert!(Gazetteer::parse("Comparator\tx\n", NormalizeConfig::default()).is_err());
    }
}
