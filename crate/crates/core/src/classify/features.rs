//! Hashed word and character n-gram features.

use serde::{Deserialize, Serialize};

use crate::text::word_tokens;

/// Feature extraction settings. Stored in model files so prediction reproduces training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// log2 of the hash space size.
    pub hash_bits: u32,
    pub word_ngrams: (usize, usize),
    pub char_ngrams: (usize, usize),
    pub seed: u64,
    /// Scale each vector to unit L2 norm.
    pub l2_normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hash_bits: 20,
            word_ngrams: (1, 2),
            char_ngrams: (3, 5),
            seed: 0x5eed,
            l2_normalize: true,
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        1usize << self.hash_bits
    }
}

/// Sparse feature vector with sorted, unique indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

struct Fnv(u64);

impl Fnv {
    fn new(seed: u64) -> Self {
        let mut h = Fnv(FNV_OFFSET);
        h.write(&seed.to_le_bytes());
        h
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    fn finish(&self) -> u64 {
        // final avalanche so low bits depend on every input byte
        let mut x = self.0;
        x ^= x >> 33;
        x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
        x ^= x >> 33;
        x
    }
}

fn feature_index(cfg: &FeatureConfig, segment: usize, kind: u8, gram: &str) -> u32 {
    let mut h = Fnv::new(cfg.seed);
    h.write(&(segment as u32).to_le_bytes());
    h.write(&[kind]);
    h.write(gram.as_bytes());
    (h.finish() & ((1u64 << cfg.hash_bits) - 1)) as u32
}

const KIND_WORD: u8 = b'w';
const KIND_CHAR: u8 = b'c';
const KIND_EMPTY: u8 = b'e';

/// Featurize the segments of one example. Every feature is salted with its segment position.
pub fn featurize(segments: &[String], cfg: &FeatureConfig) -> FeatureVector {
    let mut raw: Vec<u32> = Vec::new();
    for (si, seg) in segments.iter().enumerate() {
        let words: Vec<String> = word_tokens(seg).into_iter().map(|t| t.norm).collect();
        if words.is_empty() {
            raw.push(feature_index(cfg, si, KIND_EMPTY, ""));
            continue;
        }
        let (wlo, whi) = cfg.word_ngrams;
        for n in wlo.max(1)..=whi {
            for w in words.windows(n) {
                raw.push(feature_index(cfg, si, KIND_WORD, &w.join(" ")));
            }
        }
        let (clo, chi) = cfg.char_ngrams;
        if clo > 0 {
            let padded: Vec<char> = format!(" {} ", words.join(" ")).chars().collect();
            for n in clo..=chi {
                for w in padded.windows(n) {
                    let gram: String = w.iter().collect();
                    raw.push(feature_index(cfg, si, KIND_CHAR, &gram));
                }
            }
        }
    }
    raw.sort_unstable();
    let mut fv = FeatureVector::default();
    for idx in raw {
        if fv.indices.last() == Some(&idx) {
            *fv.values.last_mut().unwrap() += 1.0;
        } else {
            fv.indices.push(idx);
            fv.values.push(1.0);
        }
    }
    if cfg.l2_normalize {
        let norm = fv.norm();
        if norm > 0.0 {
            fv.values.iter_mut().for_each(|v| *v /= norm);
        }
    }
    fv
}
