use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use clinlink_core::cdb::ConceptDatabase;
use clinlink_core::curve::{learning_curve, CurveOptions};
use clinlink_core::eval::{score, GoldCorpus, Groups};
use clinlink_core::export::{read_records, write_records, AnnotationExport};
use clinlink_core::meta::{build_examples, train_meta, MetaHyper, MetaModel, MetaTask};
use clinlink_core::model::{load_model, load_vocab, save_model, save_vocab};
use clinlink_core::synth::DisambiguationSpec;
use clinlink_core::trainer::{self_supervised_train, supervised_train, TrainOptions};
use clinlink_core::{Engine, EngineConfig, LinkerConfig, TextPipeline, Vocabulary};
use clinlink_service::{AppState, ServiceConfig};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "clinlink", version, about = "Clinical concept recognition and linking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count corpus words and attach word vectors.
    BuildVcb(BuildVcb),
    /// Build a model bundle from a concept CSV and a vocabulary.
    BuildCdb(BuildCdb),
    /// Self-supervised training on raw documents.
    TrainSelf(TrainSelf),
    /// Supervised training from an annotation export.
    TrainSupervised(TrainSupervised),
    /// Annotate documents to JSON lines.
    Annotate(Annotate),
    /// Train a meta-annotation classifier from an annotation export.
    TrainMeta(TrainMeta),
    /// Score predicted annotations against gold annotations.
    Evaluate(Evaluate),
    /// Disambiguation F1 against training examples per concept on a
    /// synthetic shared-abbreviation corpus.
    LearningCurve(LearningCurve),
    /// Run the HTTP service.
    Serve(Serve),
}

#[derive(Args)]
struct BuildVcb {
    /// Documents: one per line, or JSON lines with `doc_id` and `text`.
    #[arg(long, env = "CLINLINK_CORPUS")]
    corpus: PathBuf,
    /// Word vectors: `<count> <dim>` header then `<word> <values...>` lines.
    #[arg(long, env = "CLINLINK_VECTORS")]
    vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 1, env = "CLINLINK_MIN_COUNT")]
    min_count: u64,
    /// Vector dimension when no vector file is given.
    #[arg(long, default_value_t = 300, env = "CLINLINK_DIM")]
    dim: usize,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, env = "CLINLINK_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Two-column `word<TAB>lemma` file.
    #[arg(long, env = "CLINLINK_LEMMAS")]
    lemmas: Option<PathBuf>,
    /// One stopword per line; replaces the built-in list.
    #[arg(long, env = "CLINLINK_STOPWORDS")]
    stopwords: Option<PathBuf>,
}

impl PipelineArgs {
    fn pipeline(&self) -> Result<TextPipeline> {
        let mut p = TextPipeline::default();
        if let Some(path) = &self.lemmas {
            p.lemmas = TextPipeline::load_lemmas(path)?;
        }
        if let Some(path) = &self.stopwords {
            p.stopwords = TextPipeline::load_stopwords(path)?;
        }
        Ok(p)
    }
}

#[derive(Args)]
struct LinkerArgs {
    #[arg(long, env = "CLINLINK_THRESHOLD")]
    threshold: Option<f64>,
    #[arg(long, env = "CLINLINK_S_LONG")]
    s_long: Option<usize>,
    #[arg(long, env = "CLINLINK_S_SHORT")]
    s_short: Option<usize>,
    #[arg(long, env = "CLINLINK_MIN_TRAIN_COUNT")]
    min_train_count: Option<u64>,
    /// Disable token-order-insensitive matching.
    #[arg(long, env = "CLINLINK_NO_REORDER")]
    no_reorder: bool,
    /// Disable spelling correction.
    #[arg(long, env = "CLINLINK_NO_SPELL")]
    no_spell: bool,
}

impl LinkerArgs {
    fn apply(&self, config: &mut EngineConfig) -> Result<()> {
        let l: &mut LinkerConfig = &mut config.linker;
        if let Some(t) = self.threshold {
            l.similarity_threshold = t;
        }
        if let Some(s) = self.s_long {
            l.long_context_s = s;
        }
        if let Some(s) = self.s_short {
            l.short_context_s = s;
        }
        if let Some(n) = self.min_train_count {
            l.min_train_count_for_disambiguation = n;
        }
        if self.no_reorder {
            l.allow_token_reorder = false;
        }
        if self.no_spell {
            config.spell_check = false;
        }
        config.linker.validate()?;
        Ok(())
    }
}

#[derive(Args)]
struct BuildCdb {
    /// CSV with header `cui,name,type_ids,name_status`.
    #[arg(long, env = "CLINLINK_CONCEPTS")]
    concepts: PathBuf,
    #[arg(long, env = "CLINLINK_VOCAB")]
    vocab: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    linker: LinkerArgs,
    #[arg(long, env = "CLINLINK_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainSelf {
    #[arg(long, env = "CLINLINK_MODEL")]
    model: PathBuf,
    #[arg(long, env = "CLINLINK_CORPUS")]
    corpus: PathBuf,
    #[arg(long, default_value_t = 1, env = "CLINLINK_EPOCHS")]
    epochs: usize,
    #[arg(long, default_value_t = 0, env = "CLINLINK_SEED")]
    seed: u64,
    #[command(flatten)]
    linker: LinkerArgs,
    /// Write training statistics as JSON.
    #[arg(long, env = "CLINLINK_STATS")]
    stats: Option<PathBuf>,
    #[arg(long, env = "CLINLINK_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainSupervised {
    #[arg(long, env = "CLINLINK_MODEL")]
    model: PathBuf,
    #[arg(long, env = "CLINLINK_EXPORT")]
    export: PathBuf,
    #[arg(long, default_value_t = 1, env = "CLINLINK_EPOCHS")]
    epochs: usize,
    #[arg(long, default_value_t = 0, env = "CLINLINK_SEED")]
    seed: u64,
    #[arg(long, env = "CLINLINK_STATS")]
    stats: Option<PathBuf>,
    #[arg(long, env = "CLINLINK_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct Annotate {
    #[arg(long, env = "CLINLINK_MODEL")]
    model: PathBuf,
    #[arg(long = "in", env = "CLINLINK_IN")]
    input: PathBuf,
    #[arg(long, env = "CLINLINK_OUT")]
    out: PathBuf,
    /// Meta-annotation models to apply.
    #[arg(long, env = "CLINLINK_META", value_delimiter = ',')]
    meta: Vec<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, env = "CLINLINK_THREADS")]
    threads: Option<usize>,
    /// Include document text in each record.
    #[arg(long, env = "CLINLINK_INCLUDE_TEXT")]
    include_text: bool,
}

#[derive(Args)]
struct TrainMeta {
    #[arg(long, env = "CLINLINK_MODEL")]
    model: PathBuf,
    #[arg(long, env = "CLINLINK_EXPORT")]
    export: PathBuf,
    #[arg(long, env = "CLINLINK_TASK")]
    task: String,
    #[arg(long, env = "CLINLINK_LABELS", value_delimiter = ',', required = true)]
    labels: Vec<String>,
    #[arg(long, default_value_t = 15, env = "CLINLINK_WINDOW")]
    window: usize,
    #[arg(long, default_value_t = 20, env = "CLINLINK_EPOCHS")]
    epochs: usize,
    #[arg(long, default_value_t = 0.01, env = "CLINLINK_LR")]
    lr: f64,
    #[arg(long, default_value_t = 64, env = "CLINLINK_HIDDEN")]
    hidden: usize,
    #[arg(long, default_value_t = 0.1, env = "CLINLINK_TEST_FRACTION")]
    test_fraction: f64,
    #[arg(long, default_value_t = 0, env = "CLINLINK_SEED")]
    seed: u64,
    /// Per-epoch metrics as JSON lines.
    #[arg(long, env = "CLINLINK_METRICS")]
    metrics: Option<PathBuf>,
    #[arg(long, env = "CLINLINK_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long, env = "CLINLINK_PRED")]
    pred: PathBuf,
    #[arg(long, env = "CLINLINK_GOLD")]
    gold: PathBuf,
    /// Lines of `group_id: member, member, ...`.
    #[arg(long, env = "CLINLINK_GROUPS")]
    groups: Option<PathBuf>,
    /// Report path; standard output when absent.
    #[arg(long, env = "CLINLINK_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LearningCurve {
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,30", env = "CLINLINK_SIZES")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5, env = "CLINLINK_TRIALS")]
    trials: usize,
    #[arg(long, default_value_t = 300, env = "CLINLINK_DIM")]
    dim: usize,
    #[arg(long, default_value_t = 0, env = "CLINLINK_SEED")]
    seed: u64,
    /// Draw both concepts' contexts from one pooled vocabulary.
    #[arg(long, env = "CLINLINK_SHARED_CONTEXTS")]
    shared_contexts: bool,
    /// Table path; standard output when absent.
    #[arg(long, env = "CLINLINK_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Serve {
    #[arg(long, env = "CLINLINK_MODEL")]
    model: PathBuf,
    #[arg(long, default_value_t = 8080, env = "CLINLINK_PORT")]
    port: u16,
    #[arg(long, default_value = "127.0.0.1", env = "CLINLINK_HOST")]
    host: String,
    /// Service TOML configuration.
    #[arg(long, env = "CLINLINK_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "CLINLINK_META", value_delimiter = ',')]
    meta: Vec<PathBuf>,
}

#[derive(Deserialize)]
struct JsonDocument {
    doc_id: String,
    text: String,
}

/// Documents from `path`: JSON lines when the extension is `.jsonl`,
/// otherwise one document per non-empty line with its line number as id.
fn read_documents(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).with_context(|| format!("{}", path.display()))?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if jsonl {
            let d: JsonDocument = serde_json::from_str(&line)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
            docs.push((d.doc_id, d.text));
        } else {
            docs.push(((i + 1).to_string(), line));
        }
    }
    Ok(docs)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("{}", path.display()))?,
    ))
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("{}", p.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load(path: &Path) -> Result<Engine> {
    load_model(path).with_context(|| format!("{}", path.display()))
}

fn read_export(path: &Path) -> Result<AnnotationExport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    AnnotationExport::from_json(&text).with_context(|| format!("{}", path.display()))
}

fn attach_meta(engine: &mut Engine, paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        let m = MetaModel::load(p).with_context(|| format!("{}", p.display()))?;
        if m.input_dim != engine.vocab.dim() {
            bail!(
                "{}: meta model expects {}-dimensional vectors, vocabulary has {}",
                p.display(),
                m.input_dim,
                engine.vocab.dim()
            );
        }
        engine.meta.push(m);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildVcb(a) => {
            let pipeline = a.pipeline.pipeline()?;
            let docs = read_documents(&a.corpus)?;
            let words = docs.iter().flat_map(|(_, t)| pipeline.word_norms(t));
            let mut vocab = Vocabulary::build(words, a.min_count, a.dim)?;
            if let Some(v) = &a.vectors {
                let f = File::open(v).with_context(|| format!("{}", v.display()))?;
                vocab.attach_vectors(BufReader::new(f))?;
            }
            vocab.fill_fallback_vectors();
            save_vocab(&vocab, &a.out)?;
            eprintln!("vocabulary: {} words, dim {}", vocab.len(), vocab.dim());
        }
        Command::BuildCdb(a) => {
            let pipeline = a.pipeline.pipeline()?;
            let vocab = load_vocab(&a.vocab).with_context(|| format!("{}", a.vocab.display()))?;
            let file = File::open(&a.concepts).with_context(|| format!("{}", a.concepts.display()))?;
            let report = ConceptDatabase::from_csv(file, &pipeline)?;
            for e in &report.row_errors {
                eprintln!("warning: {}:{}: {}", a.concepts.display(), e.line, e.message);
            }
            let mut config = EngineConfig::default();
            a.linker.apply(&mut config)?;
            let engine = Engine::new(vocab, report.cdb, pipeline, config);
            save_model(&engine, &a.out)?;
            eprintln!(
                "concepts: {}, names: {}, rejected rows: {}",
                engine.cdb.len(),
                engine.cdb.name_index().len(),
                report.row_errors.len()
            );
        }
        Command::TrainSelf(a) => {
            let mut engine = load(&a.model)?;
            a.linker.apply(&mut engine.config)?;
            let texts: Vec<String> = read_documents(&a.corpus)?.into_iter().map(|(_, t)| t).collect();
            let stats = self_supervised_train(
                &mut engine,
                &texts,
                TrainOptions {
                    epochs: a.epochs,
                    seed: a.seed,
                },
            );
            save_model(&engine, &a.out)?;
            if let Some(p) = &a.stats {
                write_json(Some(p), &stats)?;
            }
            eprintln!("documents: {}, mentions trained: {}", stats.docs_seen, stats.mentions_trained);
        }
        Command::TrainSupervised(a) => {
            let mut engine = load(&a.model)?;
            let export = read_export(&a.export)?;
            let stats = supervised_train(
                &mut engine,
                &export,
                TrainOptions {
                    epochs: a.epochs,
                    seed: a.seed,
                },
            );
            save_model(&engine, &a.out)?;
            if let Some(p) = &a.stats {
                write_json(Some(p), &stats)?;
            }
            eprintln!(
                "annotations trained: {}, incorrect: {}, skipped: {}",
                stats.mentions_trained, stats.incorrect, stats.skipped
            );
        }
        Command::Annotate(a) => {
            let mut engine = load(&a.model)?;
            attach_meta(&mut engine, &a.meta)?;
            let docs = read_documents(&a.input)?;
            let threads = a
                .threads
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let mut records = engine.annotate_batch(&docs, threads);
            if a.include_text {
                for (r, (_, t)) in records.iter_mut().zip(&docs) {
                    r.text = Some(t.clone());
                }
            }
            let mut w = create(&a.out)?;
            write_records(&mut w, &records)?;
            w.flush()?;
        }
        Command::TrainMeta(a) => {
            let engine = load(&a.model)?;
            let export = read_export(&a.export)?;
            let labels: Vec<&str> = a.labels.iter().map(String::as_str).collect();
            let mut task = MetaTask::new(&a.task, &labels);
            task.context_window = a.window;
            let hyper = MetaHyper {
                epochs: a.epochs,
                lr: a.lr,
                hidden_dim: a.hidden,
                seed: a.seed,
                test_fraction: a.test_fraction,
                ..MetaHyper::default()
            };
            let examples = build_examples(&export, &task, &engine, a.seed);
            let result = train_meta(&examples, &task, &hyper, &engine.vocab)?;
            result.model.save(&a.out)?;
            if let Some(p) = &a.metrics {
                let mut w = create(p)?;
                for m in &result.metrics {
                    serde_json::to_writer(&mut w, m)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            if let Some(last) = result.metrics.iter().rev().find(|m| m.split == "test") {
                eprintln!(
                    "train {} / test {} examples; test macro F1 {:.4}, weighted F1 {:.4}",
                    result.train_size, result.test_size, last.macro_f1, last.weighted_f1
                );
            }
        }
        Command::Evaluate(a) => {
            let open = |p: &Path| -> Result<BufReader<File>> {
                Ok(BufReader::new(File::open(p).with_context(|| format!("{}", p.display()))?))
            };
            let pred = read_records(open(&a.pred)?).with_context(|| format!("{}", a.pred.display()))?;
            let gold = read_records(open(&a.gold)?).with_context(|| format!("{}", a.gold.display()))?;
            let gold = GoldCorpus::from_records(&gold)?;
            let groups = match &a.groups {
                Some(p) => Groups::parse(open(p)?).with_context(|| format!("{}", p.display()))?,
                None => Groups::default(),
            };
            let report = score(&pred, &gold, &groups)?;
            write_json(a.out.as_deref(), &report)?;
        }
        Command::LearningCurve(a) => {
            let spec = DisambiguationSpec {
                seed: a.seed,
                distinct_topics: !a.shared_contexts,
                ..DisambiguationSpec::default()
            };
            let opts = CurveOptions {
                sizes: a.sizes,
                trials: a.trials,
                dim: a.dim,
                ..CurveOptions::default()
            };
            let points = learning_curve(&spec, &opts)?;
            let mut table = String::from("size\tmean_f1\tsd_f1\truns\n");
            for p in points {
                table.push_str(&format!("{}\t{:.4}\t{:.4}\t{}\n", p.size, p.mean_f1, p.sd_f1, p.runs));
            }
            match &a.out {
                Some(p) => std::fs::write(p, table).with_context(|| format!("{}", p.display()))?,
                None => std::io::stdout().write_all(table.as_bytes())?,
            }
        }
        Command::Serve(a) => {
            let mut engine = load(&a.model)?;
            attach_meta(&mut engine, &a.meta)?;
            let config = match &a.config {
                Some(p) => ServiceConfig::load(p)?,
                None => ServiceConfig::default(),
            };
            let addr: SocketAddr = format!("{}:{}", a.host, a.port)
                .parse()
                .with_context(|| format!("bad address {}:{}", a.host, a.port))?;
            let state = AppState::new(Some(engine), config)?;
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on {addr}");
            rt.block_on(clinlink_service::serve(state, addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
