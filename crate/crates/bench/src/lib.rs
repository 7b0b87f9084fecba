//! Fixtures shared by the benchmarks in `benches/`.

use clinlink_core::synth::{throughput_fixture, ThroughputFixture};
use clinlink_core::trainer::self_supervised_train;
use clinlink_core::{ConceptDatabase, Engine, EngineConfig, TextPipeline, TrainOptions, Vocabulary};

/// Engine over a synthetic dictionary of `n_names` names, trained briefly on
/// the first documents of the fixture so linking computes contexts.
pub fn engine(n_names: usize, bytes: usize, dim: usize) -> (Engine, ThroughputFixture) {
    let fixture = throughput_fixture(n_names, bytes, 0);
    let pipeline = TextPipeline::default();
    let mut vocab = Vocabulary::build(
        fixture.documents.iter().flat_map(|d| pipeline.word_norms(d)),
        1,
        dim,
    )
    .expect("non-empty fixture");
    vocab.fill_fallback_vectors();
    let rows = fixture.rows.iter().cloned().enumerate().map(|(i, r)| (i + 1, Ok(r)));
    let cdb = ConceptDatabase::build(rows, &pipeline).expect("valid rows").cdb;
    let mut engine = Engine::new(vocab, cdb, pipeline, EngineConfig::default());
    let warm = fixture.documents.len().min(50);
    self_supervised_train(&mut engine, &fixture.documents[..warm], TrainOptions { epochs: 1, seed: 0 });
    (engine, fixture)
}
