use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use clinlink_bench::engine;
use clinlink_core::spell::SpellChecker;
use clinlink_core::trainer::Trainer;
use clinlink_core::TrainStats;

fn annotate(c: &mut Criterion) {
    let (engine, fixture) = engine(10_000, 400_000, 300);
    let doc = &fixture.documents[0];
    let mut g = c.benchmark_group("annotate");
    g.throughput(Throughput::Bytes(doc.len() as u64));
    g.bench_function("document_2kb", |b| b.iter(|| engine.annotate_record("d", black_box(doc))));
    g.bench_function("detect_only", |b| {
        let processed = engine.process("d", doc);
        b.iter(|| engine.detect(black_box(&processed)))
    });
    g.bench_function("tokenize_and_spell", |b| b.iter(|| engine.process("d", black_box(doc))));
    g.finish();

    let mut g = c.benchmark_group("batch");
    g.sample_size(10);
    g.throughput(Throughput::Bytes(fixture.total_bytes() as u64));
    let docs: Vec<(String, String)> = fixture
        .documents
        .iter()
        .enumerate()
        .map(|(i, d)| (i.to_string(), d.clone()))
        .collect();
    for threads in [1, 4] {
        g.bench_function(format!("threads_{threads}"), |b| b.iter(|| engine.annotate_batch(&docs, threads)));
    }
    g.finish();
}

fn spell(c: &mut Criterion) {
    let (engine, _) = engine(10_000, 50_000, 16);
    let checker = SpellChecker::new(engine.cdb.words());
    let words: Vec<String> = checker.words().iter().take(200).map(|w| format!("{w}x")).collect();
    c.bench_function("spell/correct_200", |b| {
        b.iter(|| words.iter().filter(|w| checker.correct(w, &engine.vocab).is_some()).count())
    });
}

fn train(c: &mut Criterion) {
    let (engine, fixture) = engine(2_000, 100_000, 300);
    let doc = fixture.documents[1].clone();
    c.bench_function("train/self_supervised_document", |b| {
        b.iter_batched(
            || (engine.clone(), Trainer::new(&engine.vocab, 0)),
            |(mut e, mut t)| {
                let mut stats = TrainStats::default();
                t.train_document(&mut e, "d", &doc, &mut stats);
                stats
            },
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, annotate, spell, train);
criterion_main!(benches);
