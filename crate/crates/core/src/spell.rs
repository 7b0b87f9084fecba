//! Spelling correction against dictionary words.
//!
//! A word is checked against the vocabulary but corrected only towards words
//! that occur in concept names. Candidate lookup uses a symmetric-delete
//! index; every candidate is confirmed with an exact Levenshtein distance.

use std::collections::{HashMap, HashSet};

use crate::text::is_abbreviation;
use crate::vocab::Vocabulary;

const INDEX_DEPTH: usize = 2;

/// Maximum edits allowed for a word of `len` characters: one below six
/// characters, two from six upwards.
pub fn edit_budget(len: usize) -> usize {
    if len < 6 {
        1
    } else {
        2
    }
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn deletes(word: &str, depth: usize, out: &mut HashSet<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut frontier = vec![chars];
    out.insert(word.to_string());
    for _ in 0..depth {
        let mut next = Vec::new();
        for w in &frontier {
            for i in 0..w.len() {
                let mut d = w.clone();
                d.remove(i);
                if out.insert(d.iter().collect()) {
                    next.push(d);
                }
            }
        }
        frontier = next;
    }
}

#[derive(Debug, Clone, Default)]
pub struct SpellChecker {
    words: Vec<String>,
    index: HashMap<String, Vec<u32>>,
}

impl SpellChecker {
    /// Index the (lowercase) words that occur in dictionary names.
    pub fn new<I, S>(cdb_words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words: Vec<String> = cdb_words
            .into_iter()
            .map(|w| w.as_ref().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        words.sort();
        words.dedup();
        let mut index: HashMap<String, Vec<u32>> = HashMap::new();
        let mut scratch = HashSet::new();
        for (id, word) in words.iter().enumerate() {
            scratch.clear();
            deletes(word, INDEX_DEPTH, &mut scratch);
            for d in scratch.drain() {
                index.entry(d).or_default().push(id as u32);
            }
        }
        Self { words, index }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Correction for `word`, or `None` when it is spelled correctly, is an
    /// abbreviation, is not purely alphabetic, or has no candidate in range.
    ///
    /// Candidates are ranked by edit distance, then vocabulary frequency
    /// (descending), then lexicographically.
    pub fn correct(&self, word: &str, vocab: &Vocabulary) -> Option<String> {
        if word.is_empty() || !word.chars().all(char::is_alphabetic) || is_abbreviation(word) {
            return None;
        }
        let lower = word.to_lowercase();
        if vocab.contains(&lower) {
            return None;
        }
        let budget = edit_budget(lower.chars().count());
        let mut probes = HashSet::new();
        deletes(&lower, budget, &mut probes);
        let mut seen = HashSet::new();
        let mut best: Option<(usize, u64, &str)> = None;
        for probe in &probes {
            let Some(ids) = self.index.get(probe) else {
                continue;
            };
            for &id in ids {
                if !seen.insert(id) {
                    continue;
                }
                let cand = self.words[id as usize].as_str();
                let dist = levenshtein(&lower, cand);
                if dist > budget {
                    continue;
                }
                let freq = vocab.count(cand);
                let better = match best {
                    None => true,
                    Some((bd, bf, bw)) => (dist, std::cmp::Reverse(freq), cand) < (bd, std::cmp::Reverse(bf), bw),
                };
                if better {
                    best = Some((dist, freq, cand));
                }
            }
        }
        match best {
            Some((0, _, _)) | None => None,
            Some((_, _, w)) => Some(w.to_string()),
        }
    }
}
