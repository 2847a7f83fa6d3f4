//! Concept normalization: an ontology, a synonym dictionary over it, and
//! leftmost-longest linking of text to concept ids.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PicoLabel, TokenSpan};
use crate::pico::PicoSpan;
use crate::text::{word_tokens, CharIndex, NormalizeConfig};
use crate::trie::TokenTrie;

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate concept id {0}")]
    DuplicateConcept(String),
    #[error("concept {concept} has unknown parent {parent}")]
    UnknownParent { concept: String, parent: String },
    #[error("ontology contains a cycle through {0}")]
    Cycle(String),
    #[error("unknown concept id {0}")]
    UnknownConcept(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn read(path: &Path) -> Result<String, NormalizeError> {
    fs::read_to_string(path).map_err(|e| NormalizeError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Data lines of a TSV file with their 1-based line numbers.
fn tsv_rows(content: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    content.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim_end_matches('\r');
        if l.trim().is_empty() || l.starts_with('#') {
            None
        } else {
            Some((i + 1, l.split('\t').collect()))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub concept_id: String,
    pub preferred_name: String,
    pub parent_ids: BTreeSet<String>,
    /// Surface forms, always including the preferred name.
    pub synonyms: BTreeSet<String>,
}

impl Concept {
    pub fn new(id: &str, name: &str, parents: &[&str]) -> Self {
        Concept {
            concept_id: id.to_string(),
            preferred_name: name.to_string(),
            parent_ids: parents.iter().map(|p| p.to_string()).collect(),
            synonyms: BTreeSet::from([name.to_string()]),
        }
    }
}

/// A concept hierarchy. Parent links form a DAG.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    concepts: BTreeMap<String, Concept>,
    children: BTreeMap<String, BTreeSet<String>>,
}

impl Ontology {
    pub fn new(concepts: Vec<Concept>) -> Result<Self, NormalizeError> {
        let mut map = BTreeMap::new();
        for mut c in concepts {
            c.synonyms.insert(c.preferred_name.clone());
            if map.contains_key(&c.concept_id) {
                return Err(NormalizeError::DuplicateConcept(c.concept_id));
            }
            map.insert(c.concept_id.clone(), c);
        }
        let mut children: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for c in map.values() {
            for p in &c.parent_ids {
                if !map.contains_key(p) {
                    return Err(NormalizeError::UnknownParent {
                        concept: c.concept_id.clone(),
                        parent: p.clone(),
                    });
                }
                children
                    .entry(p.clone())
                    .or_default()
                    .insert(c.concept_id.clone());
            }
        }
        let ont = Ontology {
            concepts: map,
            children,
        };
        ont.check_acyclic()?;
        Ok(ont)
    }

    fn check_acyclic(&self) -> Result<(), NormalizeError> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: BTreeMap<&str, u8> = BTreeMap::new();
        for root in self.concepts.keys() {
            if state.get(root.as_str()).copied().unwrap_or(0) != 0 {
                continue;
            }
            let mut stack: Vec<(&str, Vec<&str>)> = vec![(root, self.parent_list(root))];
            state.insert(root, 1);
            while let Some(top) = stack.last_mut() {
                let node = top.0;
                match top.1.pop() {
                    Some(p) => match state.get(p).copied().unwrap_or(0) {
                        0 => {
                            state.insert(p, 1);
                            let next = self.parent_list(p);
                            stack.push((p, next));
                        }
                        1 => return Err(NormalizeError::Cycle(p.to_string())),
                        _ => {}
                    },
                    None => {
                        state.insert(node, 2);
                        stack.pop();
                    }
                }
            }
        }
        Ok(())
    }

    fn parent_list(&self, id: &str) -> Vec<&str> {
        self.concepts
            .get(id)
            .map(|c| c.parent_ids.iter().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// Parse `concept_id<TAB>preferred_name<TAB>parent_ids` with `|`-separated parents.
    pub fn parse(content: &str) -> Result<Self, NormalizeError> {
        let mut concepts = Vec::new();
        for (line, cols) in tsv_rows(content) {
            if cols.len() < 2 || cols[0].trim().is_empty() || cols[1].trim().is_empty() {
                return Err(NormalizeError::Parse {
                    line,
                    reason: "expected concept_id<TAB>preferred_name<TAB>parent_ids".into(),
                });
            }
            let parents: Vec<&str> = cols
                .get(2)
                .map(|p| p.split('|').map(str::trim).filter(|p| !p.is_empty()).collect())
                .unwrap_or_default();
            concepts.push(Concept::new(cols[0].trim(), cols[1].trim(), &parents));
        }
        Self::new(concepts)
    }

    pub fn load(path: &Path) -> Result<Self, NormalizeError> {
        Self::parse(&read(path)?)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.concepts.contains_key(id)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn require(&self, id: &str) -> Result<&Concept, NormalizeError> {
        self.get(id)
            .ok_or_else(|| NormalizeError::UnknownConcept(id.to_string()))
    }

    pub fn parents(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.get(id).map(|c| &c.parent_ids)
    }

    pub fn children(&self, id: &str) -> impl Iterator<Item = &String> {
        self.children.get(id).into_iter().flatten()
    }

    pub fn preferred_name<'a>(&'a self, id: &'a str) -> &'a str {
        self.get(id).map_or(id, |c| c.preferred_name.as_str())
    }
}

/// Equal, or one concept is an immediate parent of the other.
pub fn relaxed_equal(a: &str, b: &str, ontology: &Ontology) -> Result<bool, NormalizeError> {
    let ca = ontology.require(a)?;
    let cb = ontology.require(b)?;
    Ok(a == b || ca.parent_ids.contains(b) || cb.parent_ids.contains(a))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymRow {
    pub concept_id: String,
    pub synonym: String,
}

/// Parse `concept_id<TAB>synonym` rows.
pub fn parse_synonyms(content: &str) -> Result<Vec<SynonymRow>, NormalizeError> {
    tsv_rows(content)
        .map(|(line, cols)| match cols.as_slice() {
            [id, syn, ..] if !id.trim().is_empty() => Ok(SynonymRow {
                concept_id: id.trim().to_string(),
                synonym: syn.trim().to_string(),
            }),
            _ => Err(NormalizeError::Parse {
                line,
                reason: "expected concept_id<TAB>synonym".into(),
            }),
        })
        .collect()
}

pub fn load_synonyms(path: &Path) -> Result<Vec<SynonymRow>, NormalizeError> {
    parse_synonyms(&read(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedSynonym {
    pub row: SynonymRow,
    pub reason: String,
}

/// Trie over normalized synonym keys; each key maps to every concept claiming it.
#[derive(Debug, Clone, Default)]
pub struct SynonymDictionary {
    trie: TokenTrie<String>,
    pub normalize: NormalizeConfig,
    /// Surface synonyms per concept, for display and autocomplete.
    pub synonyms: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub key: String,
    pub concept_ids: BTreeSet<String>,
}

/// On-disk form written by `build-dict`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryFile {
    pub normalize: NormalizeConfig,
    pub entries: Vec<DictionaryEntry>,
    pub synonyms: BTreeMap<String, BTreeSet<String>>,
}

impl SynonymDictionary {
    pub fn new(normalize: NormalizeConfig) -> Self {
        SynonymDictionary {
            normalize,
            ..Default::default()
        }
    }

    /// Add a synonym; returns false when it normalizes to nothing.
    pub fn insert(&mut self, concept_id: &str, synonym: &str) -> bool {
        let key = self.normalize.key_tokens(synonym);
        if key.is_empty() {
            return false;
        }
        self.trie.insert(&key, concept_id.to_string());
        self.synonyms
            .entry(concept_id.to_string())
            .or_default()
            .insert(synonym.to_string());
        true
    }

    /// Number of distinct normalized keys.
    pub fn len(&self) -> usize {
        self.trie.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trie.is_empty()
    }

    /// Concepts stored under the normalized form of `text`.
    pub fn lookup(&self, text: &str) -> Option<&BTreeSet<String>> {
        self.trie.get(&self.normalize.key_tokens(text))
    }

    pub fn entries(&self) -> Vec<DictionaryEntry> {
        self.trie
            .entries()
            .into_iter()
            .map(|(k, v)| DictionaryEntry {
                key: k.join(" "),
                concept_ids: v.clone(),
            })
            .collect()
    }

    pub fn to_file(&self) -> DictionaryFile {
        DictionaryFile {
            normalize: self.normalize,
            entries: self.entries(),
            synonyms: self.synonyms.clone(),
        }
    }

    pub fn from_file(file: DictionaryFile) -> Self {
        let mut d = SynonymDictionary::new(file.normalize);
        for e in file.entries {
            let key: Vec<&str> = e.key.split(' ').collect();
            for id in e.concept_ids {
                d.trie.insert(&key, id);
            }
        }
        d.synonyms = file.synonyms;
        d
    }
}

/// Dictionary over every concept's synonyms plus the extra rows. Rows naming unknown
/// concepts or without any word token are returned as rejected.
pub fn build_dictionary(
    ontology: &Ontology,
    extra: &[SynonymRow],
    normalize: NormalizeConfig,
) -> (SynonymDictionary, Vec<RejectedSynonym>) {
    let mut dict = SynonymDictionary::new(normalize);
    for c in ontology.concepts() {
        for s in &c.synonyms {
            dict.insert(&c.concept_id, s);
        }
    }
    let mut rejected = Vec::new();
    for row in extra {
        let reason = if !ontology.contains(&row.concept_id) {
            Some(format!("unknown concept id {}", row.concept_id))
        } else if !dict.insert(&row.concept_id, &row.synonym) {
            Some("synonym has no word characters".to_string())
        } else {
            None
        };
        if let Some(reason) = reason {
            rejected.push(RejectedSynonym {
                row: row.clone(),
                reason,
            });
        }
    }
    (dict, rejected)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptMatch {
    pub span: TokenSpan,
    pub concept_ids: BTreeSet<String>,
    pub matched_key: String,
}

/// Leftmost-longest, non-overlapping dictionary matches at token boundaries.
pub fn match_concepts(text: &str, dict: &SynonymDictionary) -> Vec<ConceptMatch> {
    let tokens = word_tokens(text);
    let keys: Vec<String> = tokens.iter().map(|t| dict.normalize.token(&t.norm)).collect();
    let index = CharIndex::new(text);
    dict.trie
        .scan(&keys)
        .into_iter()
        .map(|m| {
            let (s, e) = (tokens[m.first].start, tokens[m.last - 1].end);
            ConceptMatch {
                span: TokenSpan {
                    start: s,
                    end: e,
                    text: index.slice(text, s, e).unwrap_or_default().to_string(),
                },
                concept_ids: m.payload.clone(),
                matched_key: keys[m.first..m.last].join(" "),
            }
        })
        .collect()
}

/// Concepts linked from one piece of text.
pub fn text_concepts(text: &str, dict: &SynonymDictionary) -> BTreeSet<String> {
    match_concepts(text, dict)
        .into_iter()
        .flat_map(|m| m.concept_ids)
        .collect()
}

/// Per-label concept sets of a document. Spans that link to nothing are kept as unlinked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentConcepts {
    pub population: BTreeSet<String>,
    pub intervention: BTreeSet<String>,
    pub outcome: BTreeSet<String>,
    pub unlinked: Vec<PicoSpan>,
}

impl DocumentConcepts {
    pub fn for_label(&self, label: PicoLabel) -> &BTreeSet<String> {
        match label {
            PicoLabel::Population => &self.population,
            PicoLabel::Intervention => &self.intervention,
            PicoLabel::Outcome => &self.outcome,
        }
    }

    fn for_label_mut(&mut self, label: PicoLabel) -> &mut BTreeSet<String> {
        match label {
            PicoLabel::Population => &mut self.population,
            PicoLabel::Intervention => &mut self.intervention,
            PicoLabel::Outcome => &mut self.outcome,
        }
    }

    /// Union over all three labels.
    pub fn all(&self) -> BTreeSet<String> {
        self.population
            .iter()
            .chain(&self.intervention)
            .chain(&self.outcome)
            .cloned()
            .collect()
    }
}

pub fn normalize_document(spans: &[PicoSpan], dict: &SynonymDictionary) -> DocumentConcepts {
    let mut out = DocumentConcepts::default();
    for s in spans {
        let ids = text_concepts(&s.span.text, dict);
        if ids.is_empty() {
            out.unlinked.push(s.clone());
        } else {
            out.for_label_mut(s.label).extend(ids);
        }
    }
    out
}
