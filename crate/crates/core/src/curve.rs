//! Disambiguation F1 as a function of the number of training examples per
//! concept, on the synthetic shared-abbreviation corpus.

use serde::{Deserialize, Serialize};

use crate::cdb::ConceptDatabase;
use crate::engine::{Engine, EngineConfig};
use crate::error::{Error, Result};
use crate::eval::{score, std_dev, GoldCorpus, GoldDocument, Groups};
use crate::export::AnnotationRecord;
use crate::synth::{disambiguation_corpus, topic_vectors, DisambiguationCorpus, DisambiguationSpec};
use crate::text::TextPipeline;
use crate::trainer::{self_supervised_train, TrainOptions};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub mean_f1: f64,
    pub sd_f1: f64,
    /// Number of (trial, partition) runs averaged.
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveOptions {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub dim: usize,
    pub config: EngineConfig,
}

impl Default for CurveOptions {
    fn default() -> Self {
        let mut config = EngineConfig::default();
        // Every training size, including one example, must be allowed to
        // disambiguate.
        config.linker.min_train_count_for_disambiguation = 1;
        Self {
            sizes: vec![1, 5, 10, 30],
            trials: 5,
            dim: 300,
            config,
        }
    }
}

fn base_engine(corpus: &DisambiguationCorpus, spec: &DisambiguationSpec, opts: &CurveOptions) -> Result<Engine> {
    let pipeline = TextPipeline::default();
    let mut vocab = Vocabulary::build(
        corpus.texts().flat_map(|t| pipeline.word_norms(t)),
        1,
        opts.dim,
    )?;
    for (word, v) in topic_vectors(opts.dim, spec.vector_spread, spec.seed) {
        vocab.set_vector(&word, v)?;
    }
    vocab.fill_fallback_vectors();
    let rows = corpus.rows.iter().cloned().enumerate().map(|(i, r)| (i + 1, Ok(r)));
    let cdb = ConceptDatabase::build(rows, &pipeline)?.cdb;
    Ok(Engine::new(vocab, cdb, pipeline, opts.config.clone()))
}

/// Micro F1 of `engine` on the corpus test mentions.
pub fn test_f1(engine: &Engine, corpus: &DisambiguationCorpus) -> Result<f64> {
    let mut pred = Vec::with_capacity(corpus.test.len());
    let mut gold = GoldCorpus::default();
    for (i, (text, g)) in corpus.test.iter().enumerate() {
        let id = i.to_string();
        let mut rec: AnnotationRecord = engine.annotate_record(&id, text);
        rec.mentions.retain(|m| corpus.concept_ids.contains(&m.cui));
        pred.push(rec);
        gold.documents.push(GoldDocument {
            doc_id: id,
            text: Some(text.clone()),
            gold_mentions: vec![g.clone()],
        });
    }
    Ok(score(&pred, &gold, &Groups::default())?.micro.f1)
}

/// For each size `k` the training examples of every trial are split into
/// `train_per_concept / k` disjoint partitions of `k` examples per concept;
/// a fresh model is trained on each partition and scored.
pub fn learning_curve(spec: &DisambiguationSpec, opts: &CurveOptions) -> Result<Vec<CurvePoint>> {
    if opts.trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let mut per_size: Vec<Vec<f64>> = vec![Vec::new(); opts.sizes.len()];
    for trial in 0..opts.trials {
        let trial_spec = DisambiguationSpec {
            seed: spec.seed.wrapping_add(trial as u64),
            ..spec.clone()
        };
        let corpus = disambiguation_corpus(&trial_spec);
        let base = base_engine(&corpus, &trial_spec, opts)?;
        for (slot, &k) in opts.sizes.iter().enumerate() {
            if k == 0 {
                per_size[slot].push(test_f1(&base, &corpus)?);
                continue;
            }
            if k > spec.train_per_concept {
                return Err(Error::InvalidConfig(format!(
                    "size {k} exceeds {} training examples per concept",
                    spec.train_per_concept
                )));
            }
            for p in 0..spec.train_per_concept / k {
                let docs: Vec<&str> = (p * k..(p + 1) * k)
                    .flat_map(|j| [corpus.train[0][j].as_str(), corpus.train[1][j].as_str()])
                    .collect();
                let mut engine = base.clone();
                self_supervised_train(
                    &mut engine,
                    &docs,
                    TrainOptions {
                        epochs: 1,
                        seed: trial_spec.seed ^ ((k as u64) << 32) ^ p as u64,
                    },
                );
                per_size[slot].push(test_f1(&engine, &corpus)?);
            }
        }
    }
    Ok(opts
        .sizes
        .iter()
        .zip(per_size)
        .map(|(&size, f1s)| CurvePoint {
            size,
            mean_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
            sd_f1: std_dev(&f1s),
            runs: f1s.len(),
        })
        .collect())
}
