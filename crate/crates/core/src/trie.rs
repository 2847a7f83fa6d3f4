//! Token-sequence trie with leftmost-longest scanning.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Node<V: Ord> {
    children: HashMap<String, usize>,
    payload: BTreeSet<V>,
}

/// Maps normalized token sequences to payload sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenTrie<V: Ord> {
    nodes: Vec<Node<V>>,
    keys: usize,
}

impl<V: Ord> Default for TokenTrie<V> {
    fn default() -> Self {
        TokenTrie {
            nodes: vec![Node {
                children: HashMap::new(),
                payload: BTreeSet::new(),
            }],
            keys: 0,
        }
    }
}

/// A match over `tokens[first..last]` (token indices, exclusive end).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrieMatch<'a, V: Ord> {
    pub first: usize,
    pub last: usize,
    pub payload: &'a BTreeSet<V>,
}

impl<V: Ord + Clone> TokenTrie<V> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert `value` under the token sequence. Empty sequences are ignored.
    pub fn insert<S: AsRef<str>>(&mut self, tokens: &[S], value: V) -> bool {
        if tokens.is_empty() {
            return false;
        }
        let mut node = 0;
        for t in tokens {
            let next = self.nodes[node].children.get(t.as_ref()).copied();
            node = match next {
                Some(n) => n,
                None => {
                    self.nodes.push(Node {
                        children: HashMap::new(),
                        payload: BTreeSet::new(),
                    });
                    let id = self.nodes.len() - 1;
                    self.nodes[node].children.insert(t.as_ref().to_string(), id);
                    id
                }
            };
        }
        if self.nodes[node].payload.is_empty() {
            self.keys += 1;
        }
        self.nodes[node].payload.insert(value)
    }

    pub fn get<S: AsRef<str>>(&self, tokens: &[S]) -> Option<&BTreeSet<V>> {
        let mut node = 0;
        for t in tokens {
            node = *self.nodes[node].children.get(t.as_ref())?;
        }
        let p = &self.nodes[node].payload;
        (!p.is_empty()).then_some(p)
    }

    /// Number of distinct keys.
    pub fn len(&self) -> usize {
        self.keys
    }

    pub fn is_empty(&self) -> bool {
        self.keys == 0
    }

    /// All keys with payloads, sorted by key.
    pub fn entries(&self) -> Vec<(Vec<String>, &BTreeSet<V>)> {
        let mut out = Vec::new();
        let mut stack: Vec<(usize, Vec<String>)> = vec![(0, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if !self.nodes[node].payload.is_empty() {
                out.push((path.clone(), &self.nodes[node].payload));
            }
            for (tok, &child) in &self.nodes[node].children {
                let mut p = path.clone();
                p.push(tok.clone());
                stack.push((child, p));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Leftmost-longest, non-overlapping matches. Scanning resumes after each match.
    pub fn scan<'a, S: AsRef<str>>(&'a self, tokens: &[S]) -> Vec<TrieMatch<'a, V>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut node = 0;
            let mut best: Option<(usize, &BTreeSet<V>)> = None;
            for (j, t) in tokens.iter().enumerate().skip(i) {
                match self.nodes[node].children.get(t.as_ref()) {
                    Some(&n) => {
                        node = n;
                        if !self.nodes[n].payload.is_empty() {
                            best = Some((j + 1, &self.nodes[n].payload));
                        }
                    }
                    None => break,
                }
            }
            match best {
                Some((last, payload)) => {
                    out.push(TrieMatch {
                        first: i,
                        last,
                        payload,
                    });
                    i = last;
                }
                None => i += 1,
            }
        }
        out
    }
}
