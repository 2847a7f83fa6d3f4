//! Character-offset helpers and the tokenizer shared by matching, tagging and scoring.
//!
//! Every offset in this crate counts Unicode scalar values, not bytes.

use serde::{Deserialize, Serialize};

/// Number of characters in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Slice `s` by character offsets. Returns `None` when the range is out of bounds or inverted.
pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut begin = None;
    let mut finish = None;
    for (count, (byte, _)) in s.char_indices().enumerate() {
        if count == start {
            begin = Some(byte);
        }
        if count == end {
            finish = Some(byte);
            break;
        }
    }
    let total = char_len(s);
    if start == total {
        begin = Some(s.len());
    }
    if end == total {
        finish = Some(s.len());
    }
    match (begin, finish) {
        (Some(b), Some(f)) => Some(&s[b..f]),
        _ => None,
    }
}

/// Precomputed char→byte table for repeated slicing of one text.
#[derive(Debug, Clone)]
pub struct CharIndex {
    bytes: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bytes.push(text.len());
        CharIndex { bytes }
    }

    /// Length of the indexed text in characters.
    pub fn len(&self) -> usize {
        self.bytes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> Option<&'a str> {
        if start > end || end > self.len() {
            return None;
        }
        text.get(self.bytes[start]..self.bytes[end])
    }

    pub fn byte_offset(&self, char_offset: usize) -> Option<usize> {
        self.bytes.get(char_offset).copied()
    }
}

/// A word token: a maximal run of alphanumeric characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub start: usize,
    pub end: usize,
    /// Lowercased surface form.
    pub norm: String,
}

/// Split `text` into alphanumeric runs. Punctuation and whitespace separate tokens.
pub fn word_tokens(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let mut pos = 0;
    for c in text.chars() {
        if c.is_alphanumeric() {
            match current.as_mut() {
                Some((_, buf)) => buf.extend(c.to_lowercase()),
                None => current = Some((pos, c.to_lowercase().collect())),
            }
        } else if let Some((start, norm)) = current.take() {
            out.push(Token { start, end: pos, norm });
        }
        pos += 1;
    }
    if let Some((start, norm)) = current {
        out.push(Token { start, end: pos, norm });
    }
    out
}

/// Tokens used by the token-level scorer: alphanumeric runs plus each
/// non-space symbol as its own token.
pub fn scoring_tokens(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut pos = 0;
    for c in text.chars() {
        if c.is_alphanumeric() {
            run_start.get_or_insert(pos);
        } else {
            if let Some(s) = run_start.take() {
                out.push((s, pos));
            }
            if !c.is_whitespace() {
                out.push((pos, pos + 1));
            }
        }
        pos += 1;
    }
    if let Some(s) = run_start {
        out.push((s, pos));
    }
    out
}

/// Normalization applied to dictionary keys, gazetteer terms and scanned text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeConfig {
    /// Strip a plural `s` from longer tokens. Off by default.
    #[serde(default)]
    pub stem: bool,
}

impl NormalizeConfig {
    pub fn token(&self, norm: &str) -> String {
        if self.stem {
            stem_token(norm)
        } else {
            norm.to_string()
        }
    }

    /// Normalized token sequence of `text`.
    pub fn key_tokens(&self, text: &str) -> Vec<String> {
        word_tokens(text).iter().map(|t| self.token(&t.norm)).collect()
    }

    /// Normalized key: tokens joined by single spaces.
    pub fn key(&self, text: &str) -> String {
        self.key_tokens(text).join(" ")
    }
}

fn stem_token(token: &str) -> String {
    if token.chars().count() > 3
        && token.ends_with('s')
        && !token.ends_with("ss")
        && !token.ends_with("us")
        && !token.ends_with("is")
    {
        token[..token.len() - 1].to_string()
    } else {
        token.to_string()
    }
}

/// Normalized key with the default configuration.
pub fn norm_key(text: &str) -> String {
    NormalizeConfig::default().key(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slicing_counts_chars() {
        let s = "naïve café trial";
        assert_eq!(char_slice(s, 6, 10), Some("café"));
        assert_eq!(char_slice(s, 0, 0), Some(""));
        assert_eq!(char_slice(s, 16, 16), Some(""));
        assert_eq!(char_slice(s, 10, 17), None);
        let idx = CharIndex::new(s);
        assert_eq!(idx.slice(s, 6, 10), Some("café"));
        assert_eq!(idx.len(), 16);
    }

    #[test]
    fn tokens_and_keys() {
        let toks = word_tokens("Migraine, with Aura");
        assert_eq!(toks.len(), 3);
        assert_eq!((toks[1].start, toks[1].end), (10, 14));
        assert_eq!(norm_key("Migraine, with Aura"), "migraine with aura");
        assert_eq!(norm_key("migraine  with   aura"), "migraine with aura");
        assert_eq!(norm_key("Progression-Free Survival"), "progression free survival");
    }

    #[test]
    fn stemming_is_opt_in() {
        let cfg = NormalizeConfig { stem: true };
        assert_eq!(cfg.key("Migraines"), "migraine");
        assert_eq!(cfg.key("class"), "class");
        assert_eq!(norm_key("Migraines"), "migraines");
    }

    #[test]
    fn scoring_tokens_split_symbols() {
        let toks = scoring_tokens("HbA1c (p<0.05)");
        let texts: Vec<&str> = toks
            .iter()
            .map(|&(s, e)| char_slice("HbA1c (p<0.05)", s, e).unwrap())
            .collect();
        assert_eq!(texts, vec!["HbA1c", "(", "p", "<", "0", ".", "05", ")"]);
    }
}
