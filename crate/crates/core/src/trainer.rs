//! Concept vector training: positive updates from observed contexts and
//! negative updates from randomly sampled vocabulary words.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cdb::ConceptRecord;
use crate::embedding::cosine_sim_clamped;
use crate::engine::Engine;
use crate::export::AnnotationExport;
use crate::linker::{LinkerConfig, MentionContext};
use crate::text::TokenizedDocument;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStats {
    pub docs_seen: u64,
    pub mentions_trained: u64,
    pub per_concept_counts: BTreeMap<String, u64>,
    pub negative_samples_drawn: u64,
    /// Annotations skipped: unknown concept or a span with no words.
    pub skipped: u64,
    /// Annotations marked incorrect or killed (recorded, never trained on).
    pub incorrect: u64,
}

impl TrainStats {
    fn record(&mut self, concept_id: &str, negatives: u64) {
        self.mentions_trained += 1;
        self.negative_samples_drawn += negatives;
        *self
            .per_concept_counts
            .entry(concept_id.to_string())
            .or_default() += 1;
    }

    pub fn merge(&mut self, other: TrainStats) {
        self.docs_seen += other.docs_seen;
        self.mentions_trained += other.mentions_trained;
        self.negative_samples_drawn += other.negative_samples_drawn;
        self.skipped += other.skipped;
        self.incorrect += other.incorrect;
        for (c, n) in other.per_concept_counts {
            *self.per_concept_counts.entry(c).or_default() += n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 1, seed: 0 }
    }
}

/// Draws vocabulary words with probability proportional to the 3/4 power of
/// their relative corpus frequency.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    words: Vec<String>,
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    /// `None` when the vocabulary has no counted words.
    pub fn new(vocab: &Vocabulary) -> Option<Self> {
        let total: f64 = vocab.iter().map(|(_, e)| e.count as f64).sum();
        if total <= 0.0 {
            return None;
        }
        let mut words = Vec::with_capacity(vocab.len());
        let mut weights = Vec::with_capacity(vocab.len());
        for (w, e) in vocab.iter() {
            words.push(w.to_string());
            weights.push((e.count as f64 / total).powf(0.75));
        }
        let z: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / z;
                acc
            })
            .collect();
        Some(Self { words, cumulative })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Probability of drawing the word at `index`.
    pub fn probability(&self, index: usize) -> f64 {
        let prev = if index == 0 {
            0.0
        } else {
            self.cumulative[index - 1]
        };
        self.cumulative[index] - prev
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen::<f64>() * self.cumulative[self.cumulative.len() - 1];
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.words.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        &self.words[self.sample_index(rng)]
    }

    /// Mean vector of `k` sampled words.
    pub fn negative_context<R: Rng + ?Sized>(
        &self,
        k: usize,
        vocab: &Vocabulary,
        rng: &mut R,
    ) -> Vec<f64> {
        let mut sum = vec![0.0; vocab.dim()];
        for _ in 0..k {
            let v = vocab.vector(self.sample(rng));
            for (a, x) in sum.iter_mut().zip(v.iter()) {
                *a += x;
            }
        }
        let k = k.max(1) as f64;
        sum.iter_mut().for_each(|x| *x /= k);
        sum
    }
}

fn move_towards(vector: &mut Option<Vec<f64>>, ctx: &[f64], lr: f64) {
    let v = vector.get_or_insert_with(|| vec![0.0; ctx.len()]);
    let sim = cosine_sim_clamped(v, ctx).unwrap_or(0.0);
    let step = lr * (1.0 - sim);
    for (a, x) in v.iter_mut().zip(ctx) {
        *a += step * x;
    }
}

/// Increment the concept counter, then pull both vectors towards their
/// contexts with learning rate `1 / train_count`. Returns the learning rate.
pub fn positive_update(concept: &mut ConceptRecord, ctx_long: &[f64], ctx_short: &[f64]) -> f64 {
    concept.train_count += 1;
    let lr = 1.0 / concept.train_count as f64;
    move_towards(&mut concept.vector_long, ctx_long, lr);
    move_towards(&mut concept.vector_short, ctx_short, lr);
    lr
}

/// Push `vector` away from a negative context: `v -= lr * sim * neg`.
pub fn negative_update(vector: &mut [f64], negative: &[f64], lr: f64) {
    let sim = cosine_sim_clamped(vector, negative).unwrap_or(0.0);
    for (a, x) in vector.iter_mut().zip(negative) {
        *a -= lr * sim * x;
    }
}

/// Applies paired positive/negative updates with a seeded sampler.
#[derive(Debug, Clone)]
pub struct Trainer {
    sampler: Option<NegativeSampler>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(vocab: &Vocabulary, seed: u64) -> Self {
        Self {
            sampler: NegativeSampler::new(vocab),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One positive update per scope followed by one negative update per
    /// scope with `K = 2s` sampled words. Returns the number of words drawn.
    pub fn update(
        &mut self,
        concept: &mut ConceptRecord,
        long: &[f64],
        short: &[f64],
        vocab: &Vocabulary,
        config: &LinkerConfig,
    ) -> u64 {
        let lr = positive_update(concept, long, short);
        let Some(sampler) = &self.sampler else {
            return 0;
        };
        let mut drawn = 0;
        for (vector, s) in [
            (&mut concept.vector_long, config.long_context_s),
            (&mut concept.vector_short, config.short_context_s),
        ] {
            let k = 2 * s;
            let neg = sampler.negative_context(k, vocab, &mut self.rng);
            if let Some(v) = vector.as_mut() {
                negative_update(v, &neg, lr);
            }
            drawn += k as u64;
        }
        drawn
    }

    /// Train `concept_id` on the context of tokens `span` in `doc`. Returns
    /// false when the span has no usable context or the concept is unknown.
    pub fn train_span(
        &mut self,
        engine: &mut Engine,
        doc: &TokenizedDocument,
        span: (usize, usize),
        concept_id: &str,
        stats: &mut TrainStats,
    ) -> bool {
        let ctx = MentionContext::compute(doc, span, &engine.vocab, &engine.config.linker);
        let (Some(long), Some(short)) = (ctx.long, ctx.short) else {
            return false;
        };
        let Some(record) = engine.cdb.get_mut(concept_id) else {
            return false;
        };
        let drawn = self.update(record, &long, &short, &engine.vocab, &engine.config.linker);
        stats.record(concept_id, drawn);
        true
    }

    /// Train `concept_id` on the characters `[start, end)` of `text`.
    pub fn train_annotation(
        &mut self,
        engine: &mut Engine,
        doc_id: &str,
        text: &str,
        (start, end): (usize, usize),
        concept_id: &str,
        stats: &mut TrainStats,
    ) -> bool {
        let doc = engine.process(doc_id, text);
        span_tokens(&doc, start, end)
            .is_some_and(|span| self.train_span(engine, &doc, span, concept_id, stats))
    }

    /// Self-supervised pass over one document.
    ///
    /// Trains on mentions linked through a unique, non-abbreviation name and
    /// on ambiguous mentions whose disambiguation succeeds.
    pub fn train_document(
        &mut self,
        engine: &mut Engine,
        doc_id: &str,
        text: &str,
        stats: &mut TrainStats,
    ) {
        stats.docs_seen += 1;
        let doc = engine.process(doc_id, text);
        let mentions = engine.link_document(&doc);
        for m in mentions {
            let Some(linked) = &m.linked else { continue };
            let eligible = if m.candidates.len() == 1 {
                engine
                    .cdb
                    .get(&linked.concept_id)
                    .and_then(|c| c.name(&m.matched_key))
                    .is_some_and(|n| n.is_unique && !n.is_abbreviation)
            } else {
                true
            };
            if eligible {
                let cid = linked.concept_id.clone();
                self.train_span(engine, &doc, m.token_span, &cid, stats);
            }
        }
    }
}

/// Run self-supervised training over `corpus` (one string per document).
pub fn self_supervised_train<S: AsRef<str>>(
    engine: &mut Engine,
    corpus: &[S],
    options: TrainOptions,
) -> TrainStats {
    let mut trainer = Trainer::new(&engine.vocab, options.seed);
    let mut stats = TrainStats::default();
    for _ in 0..options.epochs {
        for (i, text) in corpus.iter().enumerate() {
            trainer.train_document(engine, &i.to_string(), text.as_ref(), &mut stats);
        }
    }
    stats
}

/// Token span (first, last) of the word tokens overlapping `[start, end)`.
pub fn span_tokens(doc: &TokenizedDocument, start: usize, end: usize) -> Option<(usize, usize)> {
    let mut hit = doc
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.is_word() && t.start < end && start < t.end)
        .map(|(i, _)| i);
    let first = hit.next()?;
    let last = hit.next_back().unwrap_or(first);
    Some((first, last))
}

/// Apply human-confirmed annotations from an export.
///
/// Correct annotations update their concept regardless of name uniqueness;
/// incorrect or killed ones are counted but change nothing.
pub fn supervised_train(
    engine: &mut Engine,
    export: &AnnotationExport,
    options: TrainOptions,
) -> TrainStats {
    let mut trainer = Trainer::new(&engine.vocab, options.seed);
    let mut stats = TrainStats::default();
    for _ in 0..options.epochs {
        for project in &export.projects {
            for document in &project.documents {
                stats.docs_seen += 1;
                let doc = engine.process(&document.doc_id, &document.text);
                for ann in &document.annotations {
                    if engine.cdb.get(&ann.cui).is_none() {
                        stats.skipped += 1;
                        continue;
                    }
                    if !ann.correct || ann.killed {
                        stats.incorrect += 1;
                        continue;
                    }
                    let trained = span_tokens(&doc, ann.start, ann.end).is_some_and(|span| {
                        trainer.train_span(engine, &doc, span, &ann.cui, &mut stats)
                    });
                    if !trained {
                        stats.skipped += 1;
                    }
                }
            }
        }
    }
    stats
}
