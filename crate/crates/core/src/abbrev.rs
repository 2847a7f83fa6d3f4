//! Abbreviation detection and long-form rewriting.
//!
//! Definitions are found with the Schwartz-Hearst matching procedure: a single-word
//! short form inside parentheses is aligned right-to-left against the words preceding
//! it, and the first short-form character must start a word of the long form.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Sentence, TokenSpan};
use crate::text::CharIndex;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbbrevPair {
    pub short_form: String,
    pub long_form: String,
    /// The parenthetical `(SF)` including both brackets.
    pub definition_site: TokenSpan,
    pub long_form_span: TokenSpan,
}

const MAX_SHORT_FORM_CHARS: usize = 10;

/// Find abbreviation definitions in the document abstract, in order of definition site.
/// Only the first definition of a given short form is kept.
pub fn detect_abbreviations(doc: &Document) -> Vec<AbbrevPair> {
    let chars: Vec<char> = doc.abstract_text.chars().collect();
    let mut out: Vec<AbbrevPair> = Vec::new();
    for sent in &doc.sentences {
        for pair in detect_in_range(&chars, sent.start, sent.end) {
            if !out.iter().any(|p| p.short_form == pair.short_form) {
                out.push(pair);
            }
        }
    }
    out
}

/// Detection over a bare string treated as a single sentence.
pub fn detect_in_text(text: &str) -> Vec<AbbrevPair> {
    let chars: Vec<char> = text.chars().collect();
    detect_in_range(&chars, 0, chars.len())
}

fn detect_in_range(chars: &[char], start: usize, end: usize) -> Vec<AbbrevPair> {
    let mut out = Vec::new();
    let mut i = start;
    while i < end {
        if chars[i] != '(' {
            i += 1;
            continue;
        }
        let Some(close) = (i + 1..end).find(|&j| chars[j] == ')' || chars[j] == '(') else {
            break;
        };
        if chars[close] == '(' {
            // nested parenthetical: skip the outer one
            i = close;
            continue;
        }
        if let Some(pair) = pair_at(chars, start, i, close) {
            out.push(pair);
        }
        i = close + 1;
    }
    out
}

fn pair_at(chars: &[char], sent_start: usize, open: usize, close: usize) -> Option<AbbrevPair> {
    let inner: String = chars[open + 1..close].iter().collect();
    let mut sf = inner.as_str();
    for sep in ["; ", ", "] {
        if let Some(p) = sf.find(sep) {
            sf = &sf[..p];
        }
    }
    let sf = sf.trim();
    if !valid_short_form(sf) {
        return None;
    }
    let sf_chars: Vec<char> = sf.chars().collect();
    let sf_alnum = sf_chars.iter().filter(|c| c.is_alphanumeric()).count();
    if sf_alnum > MAX_SHORT_FORM_CHARS {
        return None;
    }

    // candidate long form: up to min(|A| + 5, 2|A|) words before the parenthesis
    let mut cand_end = open;
    while cand_end > sent_start && chars[cand_end - 1].is_whitespace() {
        cand_end -= 1;
    }
    let max_words = (sf_alnum + 5).min(sf_alnum * 2);
    let mut cand_start = cand_end;
    let mut words = 0;
    while cand_start > sent_start && words < max_words {
        while cand_start > sent_start && chars[cand_start - 1].is_whitespace() {
            cand_start -= 1;
        }
        if cand_start == sent_start {
            break;
        }
        while cand_start > sent_start && !chars[cand_start - 1].is_whitespace() {
            cand_start -= 1;
        }
        words += 1;
    }
    let candidate = &chars[cand_start..cand_end];
    let lf_offset = best_long_form(&sf_chars, candidate)?;
    let lf_chars = &candidate[lf_offset..];
    let long_form: String = lf_chars.iter().collect();

    if lf_chars.len() < sf_chars.len()
        || long_form.contains(&format!("{sf} "))
        || long_form.ends_with(sf)
        || contains_word(&long_form, sf)
    {
        return None;
    }
    let lf_words = long_form
        .split(|c: char| c.is_whitespace() || c == '-')
        .filter(|w| !w.is_empty())
        .count();
    if lf_words > sf_alnum * 2 || lf_words > sf_alnum + 5 {
        return None;
    }

    let site: String = chars[open..=close].iter().collect();
    Some(AbbrevPair {
        short_form: sf.to_string(),
        long_form,
        definition_site: TokenSpan {
            start: open,
            end: close + 1,
            text: site,
        },
        long_form_span: TokenSpan {
            start: cand_start + lf_offset,
            end: cand_end,
            text: lf_chars.iter().collect(),
        },
    })
}

fn valid_short_form(sf: &str) -> bool {
    let n = sf.chars().count();
    if !(2..=MAX_SHORT_FORM_CHARS).contains(&n) || sf.chars().any(char::is_whitespace) {
        return false;
    }
    let first = sf.chars().next().unwrap_or(' ');
    first.is_alphanumeric() && sf.chars().any(char::is_alphabetic)
}

fn lower(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

/// Right-to-left alignment of the short form against the candidate. Returns the char
/// offset in `candidate` where the long form begins.
fn best_long_form(sf: &[char], candidate: &[char]) -> Option<usize> {
    let mut l: isize = candidate.len() as isize - 1;
    for s in (0..sf.len()).rev() {
        let c = lower(sf[s]);
        if !c.is_alphanumeric() {
            continue;
        }
        while l >= 0
            && (lower(candidate[l as usize]) != c
                || (s == 0 && l > 0 && candidate[l as usize - 1].is_alphanumeric()))
        {
            l -= 1;
        }
        if l < 0 {
            return None;
        }
        l -= 1;
    }
    let l = (l + 1) as usize;
    // back up to the start of the word containing the first matched character
    let start = candidate[..l]
        .iter()
        .rposition(|c| c.is_whitespace())
        .map(|p| p + 1)
        .unwrap_or(0);
    Some(start)
}

fn contains_word(haystack: &str, word: &str) -> bool {
    let h: Vec<char> = haystack.chars().collect();
    let w: Vec<char> = word.chars().collect();
    let found = find_occurrences(&h, &w, 0, word.chars().count() > 2).next().is_some();
    found
}

/// Word-bounded occurrences of `needle` in `hay` starting at or after `from`.
fn find_occurrences<'a>(
    hay: &'a [char],
    needle: &'a [char],
    from: usize,
    case_insensitive: bool,
) -> impl Iterator<Item = usize> + 'a {
    let n = needle.len();
    (from..hay.len().saturating_sub(n.saturating_sub(1))).filter(move |&i| {
        if n == 0 || i + n > hay.len() {
            return false;
        }
        let eq = hay[i..i + n].iter().zip(needle).all(|(a, b)| {
            if case_insensitive {
                lower(*a) == lower(*b)
            } else {
                a == b
            }
        });
        eq && (i == 0 || !hay[i - 1].is_alphanumeric())
            && (i + n == hay.len() || !hay[i + n].is_alphanumeric())
    })
}

/// One piece of the expanded text and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetSegment {
    pub expanded_start: usize,
    pub expanded_end: usize,
    pub original_start: usize,
    pub original_end: usize,
    /// True for a short form rewritten to its long form.
    pub replaced: bool,
}

/// Monotone mapping from expanded-text offsets back to original offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetMap {
    pub segments: Vec<OffsetSegment>,
    pub expanded_len: usize,
    pub original_len: usize,
}

impl OffsetMap {
    pub fn identity(len: usize) -> Self {
        OffsetMap {
            segments: if len == 0 {
                Vec::new()
            } else {
                vec![OffsetSegment {
                    expanded_start: 0,
                    expanded_end: len,
                    original_start: 0,
                    original_end: len,
                    replaced: false,
                }]
            },
            expanded_len: len,
            original_len: len,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.segments.iter().all(|s| !s.replaced)
    }

    fn segment_at(&self, offset: usize) -> Option<&OffsetSegment> {
        let i = self
            .segments
            .partition_point(|s| s.expanded_end <= offset);
        self.segments.get(i)
    }

    /// Map an expanded offset to the original text. Offsets inside a rewritten long form
    /// map to the start of its short form.
    pub fn to_original(&self, offset: usize) -> usize {
        if offset >= self.expanded_len {
            return self.original_len;
        }
        match self.segment_at(offset) {
            Some(s) if s.replaced => s.original_start,
            Some(s) => s.original_start + (offset - s.expanded_start),
            None => self.original_len,
        }
    }

    /// Map a half-open expanded span to the smallest original span that produced it.
    pub fn span_to_original(&self, start: usize, end: usize) -> (usize, usize) {
        let s = self.to_original(start);
        if end <= start {
            return (s, s);
        }
        let e = match self.segment_at(end - 1) {
            Some(seg) if seg.replaced => seg.original_end,
            Some(seg) => seg.original_start + (end - seg.expanded_start),
            None => self.original_len,
        };
        (s, e)
    }

    /// Map an original span forward to the expanded text. A span edge touching a
    /// rewritten short form moves to the matching edge of its long form.
    pub fn span_to_expanded(&self, start: usize, end: usize) -> (usize, usize) {
        let fwd = |o: usize, is_end: bool| -> usize {
            let seg = self.segments.iter().find(|s| {
                if is_end {
                    s.original_start < o && o <= s.original_end
                } else {
                    s.original_start <= o && o < s.original_end
                }
            });
            match seg {
                Some(s) if s.replaced => {
                    if is_end {
                        s.expanded_end
                    } else {
                        s.expanded_start
                    }
                }
                Some(s) => s.expanded_start + (o - s.original_start),
                None if o == 0 => 0,
                None => self.expanded_len,
            }
        };
        if end <= start {
            let s = fwd(start, false);
            return (s, s);
        }
        (fwd(start, false), fwd(end, true))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionWarning {
    pub short_form: String,
    pub start: usize,
    pub end: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expansion {
    pub document: Document,
    pub offset_map: OffsetMap,
    pub warnings: Vec<ExpansionWarning>,
}

/// Rewrite standalone short forms that follow their definition. The defining
/// parentheticals are left untouched and sentence boundaries are carried over.
pub fn expand_abbreviations(doc: &Document, pairs: &[AbbrevPair]) -> Expansion {
    let chars: Vec<char> = doc.abstract_text.chars().collect();
    let n = chars.len();
    let sites: Vec<(usize, usize)> = pairs
        .iter()
        .map(|p| (p.definition_site.start, p.definition_site.end))
        .collect();

    // (start, end, pair index)
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (pi, p) in pairs.iter().enumerate() {
        let needle: Vec<char> = p.short_form.chars().collect();
        let ci = needle.len() > 2;
        for s in find_occurrences(&chars, &needle, p.definition_site.end, ci) {
            let e = s + needle.len();
            if sites.iter().any(|&(a, b)| s < b && a < e) {
                continue;
            }
            candidates.push((s, e, pi));
        }
    }
    candidates.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    let mut accepted: Vec<(usize, usize, usize)> = Vec::new();
    let mut warnings = Vec::new();
    for c in candidates {
        if accepted.iter().any(|a| c.0 < a.1 && a.0 < c.1) {
            warnings.push(ExpansionWarning {
                short_form: pairs[c.2].short_form.clone(),
                start: c.0,
                end: c.1,
                reason: "overlaps a longer short form".into(),
            });
        } else {
            accepted.push(c);
        }
    }
    accepted.sort_by_key(|a| a.0);

    let mut text = String::with_capacity(doc.abstract_text.len());
    let mut segments = Vec::new();
    let mut orig = 0;
    let mut exp = 0;
    for (s, e, pi) in accepted {
        if s > orig {
            text.extend(&chars[orig..s]);
            segments.push(OffsetSegment {
                expanded_start: exp,
                expanded_end: exp + (s - orig),
                original_start: orig,
                original_end: s,
                replaced: false,
            });
            exp += s - orig;
        }
        let lf = &pairs[pi].long_form;
        let lf_len = lf.chars().count();
        text.push_str(lf);
        segments.push(OffsetSegment {
            expanded_start: exp,
            expanded_end: exp + lf_len,
            original_start: s,
            original_end: e,
            replaced: true,
        });
        exp += lf_len;
        orig = e;
    }
    if orig < n {
        text.extend(&chars[orig..]);
        segments.push(OffsetSegment {
            expanded_start: exp,
            expanded_end: exp + (n - orig),
            original_start: orig,
            original_end: n,
            replaced: false,
        });
        exp += n - orig;
    }

    let offset_map = OffsetMap {
        segments,
        expanded_len: exp,
        original_len: n,
    };
    // Rewrites never cross a sentence boundary, so boundaries carry over through the
    // map. Segmenting the rewritten text afresh would merge sentences whose first word
    // became lowercase and shift every later sentence index.
    let index = CharIndex::new(&text);
    let sentences = doc
        .sentences
        .iter()
        .map(|s| {
            let (start, end) = offset_map.span_to_expanded(s.start, s.end);
            Sentence {
                index: s.index,
                start,
                end,
                text: index.slice(&text, start, end).unwrap_or_default().to_string(),
            }
        })
        .collect();
    let document = Document {
        doc_id: doc.doc_id.clone(),
        title: doc.title.clone(),
        abstract_text: text,
        sentences,
        meta: doc.meta.clone(),
    };
    Expansion {
        document,
        offset_map,
        warnings,
    }
}

/// Detect and expand in one step.
pub fn preprocess(doc: &Document) -> (Vec<AbbrevPair>, Expansion) {
    let pairs = detect_abbreviations(doc);
    let expansion = expand_abbreviations(doc, &pairs);
    (pairs, expansion)
}

/// Read back the original text covered by an expanded span.
pub fn original_text<'a>(original: &'a str, map: &OffsetMap, start: usize, end: usize) -> &'a str {
    let (s, e) = map.span_to_original(start, end);
    CharIndex::new(original).slice(original, s, e).unwrap_or("")
}
