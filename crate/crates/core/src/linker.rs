//! Candidate detection with a moving expanding window, and context-based
//! linking of candidates to concepts.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::cdb::{name_key, ConceptDatabase, ConceptRecord};
use crate::embedding::{compute_context, cosine_sim_clamped, ContextMode, Scope};
use crate::error::{Error, Result};
use crate::text::{TextPipeline, TokenizedDocument};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkerConfig {
    pub similarity_threshold: f64,
    pub long_context_s: usize,
    pub short_context_s: usize,
    pub min_train_count_for_disambiguation: u64,
    pub allow_token_reorder: bool,
    /// Largest window, in word tokens, the matcher grows to.
    pub max_window: usize,
    /// Confidence given to links of unique names whose concept is untrained.
    pub untrained_confidence: f64,
    pub context_mode: ContextMode,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.3,
            long_context_s: 9,
            short_context_s: 2,
            min_train_count_for_disambiguation: 30,
            allow_token_reorder: true,
            max_window: 10,
            untrained_confidence: 0.5,
            context_mode: ContextMode::Inclusive,
        }
    }
}

impl LinkerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::InvalidConfig(format!(
                "similarity_threshold {} outside [0, 1]",
                self.similarity_threshold
            )));
        }
        if self.long_context_s == 0 || self.short_context_s == 0 {
            return Err(Error::InvalidConfig("context sizes must be >= 1".into()));
        }
        if self.max_window == 0 {
            return Err(Error::InvalidConfig("max_window must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.untrained_confidence) {
            return Err(Error::InvalidConfig(
                "untrained_confidence outside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedConcept {
    pub concept_id: String,
    /// Context similarity in [0, 1].
    pub confidence: f64,
    /// Linked through a unique name of a concept that has never been trained.
    pub untrained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityMention {
    pub start: usize,
    pub end: usize,
    /// First and last token index (inclusive) in the document.
    pub token_span: (usize, usize),
    pub matched_key: String,
    pub candidates: BTreeSet<String>,
    pub linked: Option<LinkedConcept>,
    pub meta: BTreeMap<String, String>,
}

impl EntityMention {
    pub fn confidence(&self) -> Option<f64> {
        self.linked.as_ref().map(|l| l.confidence)
    }

    pub fn concept_id(&self) -> Option<&str> {
        self.linked.as_ref().map(|l| l.concept_id.as_str())
    }

    fn token_len(&self) -> usize {
        self.token_span.1 - self.token_span.0 + 1
    }
}

/// Names with exactly two non-stopword tokens, keyed by the sorted pair, for
/// order-insensitive matching.
#[derive(Debug, Clone, Default)]
pub struct ReorderIndex {
    pairs: HashMap<String, BTreeSet<String>>,
}

fn pair_key(a: &str, b: &str) -> String {
    if a <= b {
        format!("{a} {b}")
    } else {
        format!("{b} {a}")
    }
}

impl ReorderIndex {
    pub fn new(cdb: &ConceptDatabase, pipeline: &TextPipeline) -> Self {
        let mut pairs: HashMap<String, BTreeSet<String>> = HashMap::new();
        for name in cdb.concepts().values().flat_map(|c| &c.names) {
            let content: Vec<&String> = name
                .normalized_tokens
                .iter()
                .filter(|t| !pipeline.is_stopword(t))
                .collect();
            if let [a, b] = content.as_slice() {
                pairs.entry(pair_key(a, b)).or_default().insert(name.key());
            }
        }
        Self { pairs }
    }

    fn get(&self, a: &str, b: &str) -> Option<&BTreeSet<String>> {
        self.pairs.get(&pair_key(a, b))
    }
}

/// All dictionary matches in `doc`, including nested and overlapping ones.
///
/// From every start word the window grows one word at a time while the
/// window text is a full name or a strict prefix of one; full names are
/// recorded. With reordering enabled, any two content words separated only by
/// stopwords also match a two-content-word name regardless of order.
pub fn detect_candidates(
    doc: &TokenizedDocument,
    cdb: &ConceptDatabase,
    reorder: Option<&ReorderIndex>,
    config: &LinkerConfig,
) -> Vec<EntityMention> {
    let words: Vec<usize> = (0..doc.tokens.len())
        .filter(|&i| doc.tokens[i].is_word())
        .collect();
    let mut found: BTreeMap<((usize, usize), String), BTreeSet<String>> = BTreeMap::new();
    let mut key = String::new();
    for i in 0..words.len() {
        key.clear();
        for j in i..words.len().min(i + config.max_window) {
            if j > i {
                key.push(' ');
            }
            key.push_str(&doc.tokens[words[j]].norm);
            let full = cdb.lookup(&key);
            if let Some(cands) = full {
                found.insert(((words[i], words[j]), key.clone()), cands.clone());
            }
            if full.is_none() && !cdb.is_subname(&key) {
                break;
            }
        }
    }
    if let (true, Some(index)) = (config.allow_token_reorder, reorder) {
        for (wi, &first) in words.iter().enumerate() {
            let a = &doc.tokens[first];
            if a.is_stopword {
                continue;
            }
            let Some(&second) = words[wi + 1..]
                .iter()
                .take(config.max_window.saturating_sub(1))
                .find(|&&k| !doc.tokens[k].is_stopword)
            else {
                continue;
            };
            let b = &doc.tokens[second];
            let Some(names) = index.get(&a.norm, &b.norm) else {
                continue;
            };
            for name in names {
                let span = (first, second);
                if found.contains_key(&(span, name.clone())) {
                    continue;
                }
                if let Some(cands) = cdb.lookup(name) {
                    found.insert((span, name.clone()), cands.clone());
                }
            }
        }
    }
    let mut out: Vec<EntityMention> = found
        .into_iter()
        .map(|((span, matched_key), candidates)| EntityMention {
            start: doc.tokens[span.0].start,
            end: doc.tokens[span.1].end,
            token_span: span,
            matched_key,
            candidates,
            linked: None,
            meta: BTreeMap::new(),
        })
        .collect();
    out.sort_by(|a, b| {
        (a.start, a.end, &a.matched_key).cmp(&(b.start, b.end, &b.matched_key))
    });
    out
}

/// Long and short context vectors of one mention.
#[derive(Debug, Clone)]
pub struct MentionContext {
    pub long: Option<Vec<f64>>,
    pub short: Option<Vec<f64>>,
}

impl MentionContext {
    pub fn compute(
        doc: &TokenizedDocument,
        span: (usize, usize),
        vocab: &Vocabulary,
        config: &LinkerConfig,
    ) -> Self {
        let get = |s, scope| {
            compute_context(doc, span, s, scope, vocab, config.context_mode).map(|e| e.vector)
        };
        Self {
            long: get(config.long_context_s, Scope::Long),
            short: get(config.short_context_s, Scope::Short),
        }
    }

    /// Mean of long and short similarity against a concept's vectors.
    pub fn similarity(&self, concept: &ConceptRecord) -> f64 {
        let sim = |ctx: &Option<Vec<f64>>, v: &Option<Vec<f64>>| match (ctx, v) {
            (Some(c), Some(v)) => cosine_sim_clamped(c, v).unwrap_or(0.0),
            _ => 0.0,
        };
        (sim(&self.long, &concept.vector_long) + sim(&self.short, &concept.vector_short)) / 2.0
    }
}

/// Link a detected mention, or return `None` when it should be dropped.
pub fn link(
    mut mention: EntityMention,
    doc: &TokenizedDocument,
    cdb: &ConceptDatabase,
    vocab: &Vocabulary,
    config: &LinkerConfig,
) -> Option<EntityMention> {
    let records: Vec<&ConceptRecord> = mention
        .candidates
        .iter()
        .filter_map(|c| cdb.get(c))
        .collect();
    let linked = match records.as_slice() {
        [] => None,
        [only] => {
            if only.is_trained() {
                let ctx = MentionContext::compute(doc, mention.token_span, vocab, config);
                Some(LinkedConcept {
                    concept_id: only.concept_id.clone(),
                    confidence: ctx.similarity(only),
                    untrained: false,
                })
            } else if cdb.lookup(&mention.matched_key).map_or(0, |s| s.len()) == 1 {
                Some(LinkedConcept {
                    concept_id: only.concept_id.clone(),
                    confidence: config.untrained_confidence,
                    untrained: true,
                })
            } else {
                None
            }
        }
        many => {
            if many.iter().all(|r| !r.is_trained()) {
                None
            } else {
                let ctx = MentionContext::compute(doc, mention.token_span, vocab, config);
                let mut best: Option<(&ConceptRecord, f64)> = None;
                for r in many.iter().filter(|r| r.is_trained()) {
                    let sim = ctx.similarity(r);
                    if best.is_none_or(|(_, b)| sim > b) {
                        best = Some((r, sim));
                    }
                }
                best.filter(|(r, sim)| {
                    *sim >= config.similarity_threshold
                        && r.train_count >= config.min_train_count_for_disambiguation
                })
                .map(|(r, sim)| LinkedConcept {
                    concept_id: r.concept_id.clone(),
                    confidence: sim,
                    untrained: false,
                })
            }
        }
    };
    mention.linked = Some(linked?);
    Some(mention)
}

/// Resolve overlaps: longest span first, then higher confidence, then earlier
/// start. Output is ordered by start offset.
pub fn prune_overlaps(mut mentions: Vec<EntityMention>) -> Vec<EntityMention> {
    mentions.sort_by(|a, b| {
        b.token_len()
            .cmp(&a.token_len())
            .then_with(|| {
                let (ca, cb) = (a.confidence().unwrap_or(0.0), b.confidence().unwrap_or(0.0));
                cb.total_cmp(&ca)
            })
            .then_with(|| a.start.cmp(&b.start))
            .then_with(|| a.matched_key.cmp(&b.matched_key))
    });
    let mut kept: Vec<EntityMention> = Vec::new();
    for m in mentions {
        let overlaps = kept
            .iter()
            .any(|k| m.token_span.0 <= k.token_span.1 && k.token_span.0 <= m.token_span.1);
        if !overlaps {
            kept.push(m);
        }
    }
    kept.sort_by_key(|m| (m.start, m.end));
    kept
}

/// Window key of the word tokens in `first..=last`.
pub fn span_key(doc: &TokenizedDocument, (first, last): (usize, usize)) -> String {
    let words: Vec<&str> = doc.tokens[first..=last]
        .iter()
        .filter(|t| t.is_word())
        .map(|t| t.norm.as_str())
        .collect();
    name_key(&words)
}
