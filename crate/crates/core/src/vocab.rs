//! Corpus vocabulary: word frequencies and word vectors.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub count: u64,
    pub vector: Option<Vec<f64>>,
    /// Set when `vector` is the hash-seeded fallback rather than a pretrained one.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    dim: usize,
    entries: BTreeMap<String, VocabEntry>,
}

/// Deterministic pseudo-random unit vector for `word`, seeded by its SHA-256.
pub fn fallback_vector(word: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(word.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

impl Vocabulary {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    /// Count every token of `corpus` and keep words seen at least `min_count` times.
    ///
    /// Words are lowercased; empty tokens are ignored.
    pub fn build<I, S>(corpus: I, min_count: u64, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut seen = 0usize;
        for token in corpus {
            let word = token.as_ref().to_lowercase();
            if word.is_empty() {
                continue;
            }
            seen += 1;
            *counts.entry(word).or_default() += 1;
        }
        if seen == 0 {
            return Err(Error::EmptyCorpus);
        }
        let min_count = min_count.max(1);
        let entries = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .map(|(w, count)| {
                (
                    w,
                    VocabEntry {
                        count,
                        vector: None,
                        fallback: false,
                    },
                )
            })
            .collect();
        Ok(Self { dim, entries })
    }

    /// Add `count` occurrences of `word`.
    pub fn add(&mut self, word: &str, count: u64) {
        let word = word.to_lowercase();
        if word.is_empty() || count == 0 {
            return;
        }
        self.entries
            .entry(word)
            .or_insert(VocabEntry {
                count: 0,
                vector: None,
                fallback: false,
            })
            .count += count;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn count(&self, word: &str) -> u64 {
        self.entries.get(word).map_or(0, |e| e.count)
    }

    pub fn get(&self, word: &str) -> Option<&VocabEntry> {
        self.entries.get(word)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &VocabEntry)> {
        self.entries.iter().map(|(w, e)| (w.as_str(), e))
    }

    /// Word vector for `word`: stored vector when present, otherwise the fallback.
    pub fn vector(&self, word: &str) -> Cow<'_, [f64]> {
        match self.entries.get(word).and_then(|e| e.vector.as_deref()) {
            Some(v) => Cow::Borrowed(v),
            None => Cow::Owned(fallback_vector(word, self.dim)),
        }
    }

    /// Store an explicit vector for `word`, adding the word if needed.
    pub fn set_vector(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::VectorDimension {
                word: word.to_string(),
                expected: self.dim,
                found: vector.len(),
            });
        }
        let entry = self.entries.entry(word.to_lowercase()).or_insert(VocabEntry {
            count: 1,
            vector: None,
            fallback: false,
        });
        entry.vector = Some(vector);
        entry.fallback = false;
        Ok(())
    }

    /// Give every word without a vector its fallback vector.
    pub fn fill_fallback_vectors(&mut self) {
        let dim = self.dim;
        for (word, entry) in self.entries.iter_mut() {
            if entry.vector.is_none() {
                entry.vector = Some(fallback_vector(word, dim));
                entry.fallback = true;
            }
        }
    }

    /// Attach vectors from a text file with a `<vocab_size> <dim>` header line
    /// followed by `<word> <f1> ... <fD>` lines.
    ///
    /// Words absent from the file receive fallback vectors. An empty reader
    /// leaves the dimension unchanged and flags every word as fallback.
    pub fn attach_vectors<R: BufRead>(&mut self, reader: R) -> Result<()> {
        let mut lines = reader.lines().enumerate();
        let mut dim = self.dim;
        let mut loaded: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut header_seen = false;
        for (i, line) in &mut lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            if !header_seen {
                header_seen = true;
                let (_n, d) = match (parts.next(), parts.next(), parts.next()) {
                    (Some(n), Some(d), None) => (n, d),
                    _ => {
                        return Err(Error::VectorFormat {
                            line: i + 1,
                            message: "expected header '<vocab_size> <dim>'".into(),
                        })
                    }
                };
                dim = d.parse().map_err(|_| Error::VectorFormat {
                    line: i + 1,
                    message: format!("invalid dimension '{d}'"),
                })?;
                continue;
            }
            let word = parts.next().unwrap_or_default().to_lowercase();
            let values = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::VectorFormat {
                    line: i + 1,
                    message: format!("word '{word}': {e}"),
                })?;
            if values.len() != dim {
                return Err(Error::VectorDimension {
                    word,
                    expected: dim,
                    found: values.len(),
                });
            }
            if values.iter().any(|x| !x.is_finite()) {
                return Err(Error::VectorFormat {
                    line: i + 1,
                    message: format!("word '{word}' has a non-finite component"),
                });
            }
            loaded.entry(word).or_insert(values);
        }
        self.dim = dim;
        for (word, entry) in self.entries.iter_mut() {
            match loaded.remove(word) {
                Some(v) => {
                    entry.vector = Some(v);
                    entry.fallback = false;
                }
                None => {
                    entry.vector = Some(fallback_vector(word, dim));
                    entry.fallback = true;
                }
            }
        }
        Ok(())
    }
}
