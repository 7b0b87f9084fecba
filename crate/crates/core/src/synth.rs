//! Seeded synthetic corpora: a two-concept shared-abbreviation corpus for
//! disambiguation curves, a templated negation corpus for meta-annotation,
//! and a large dictionary plus text for throughput runs.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cdb::ConceptRow;
use crate::eval::GoldMention;
use crate::export::{AnnotationExport, ExportAnnotation, ExportDocument, ExportProject, EXPORT_SCHEMA_VERSION};

const TOPIC_A: &[&str] = &[
    "pulse", "bpm", "beats", "tachycardia", "bradycardia", "rhythm", "resting", "exercise",
    "sinus", "ecg", "telemetry", "palpitations", "heartbeat", "treadmill", "monitor", "athletes",
    "beta", "blocker", "atrial", "fibrillation", "irregular", "bedside", "oximeter", "vitals",
    "ventricular", "pacing", "stress", "recovery", "systolic", "tachyarrhythmia",
];

const TOPIC_B: &[&str] = &[
    "cox", "regression", "confidence", "interval", "survival", "mortality", "cohort", "adjusted",
    "proportional", "hazards", "multivariable", "covariates", "incidence", "kaplan", "meier",
    "estimate", "followup", "endpoint", "stratified", "logrank", "censored", "baseline",
    "quartile", "association", "analysis", "deaths", "relative", "events", "registry", "tertile",
];

const FILLER: &[&str] = &[
    "patients", "study", "was", "were", "observed", "increased", "decreased", "compared", "group",
    "data", "results", "showed", "higher", "lower", "measured", "during", "after", "reported",
    "mean", "years", "clinical", "significant", "value", "levels", "noted", "overall", "men",
    "women", "treatment", "admission",
];

fn unit_gaussian<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Word vectors in which each topic's words scatter around a shared centre,
/// standing in for embeddings trained on clinical text.
pub fn topic_vectors(dim: usize, spread: f64, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7091_c5ec);
    let mut out = Vec::new();
    for topic in [TOPIC_A, TOPIC_B] {
        let centre = unit_gaussian(&mut rng, dim);
        for w in topic {
            let noise = unit_gaussian(&mut rng, dim);
            let mut v: Vec<f64> = centre.iter().zip(&noise).map(|(c, e)| c + spread * e).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            out.push((w.to_string(), v));
        }
    }
    out
}

/// Parameters of the shared-abbreviation corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DisambiguationSpec {
    pub train_per_concept: usize,
    pub test_mentions: usize,
    /// Context words on each side of a mention.
    pub context_words: usize,
    /// Probability a context word comes from the concept's own topic.
    pub topic_prob: f64,
    /// Probability a context word comes from the other concept's topic.
    pub cross_prob: f64,
    /// When false both concepts draw from one pooled topic list.
    pub distinct_topics: bool,
    /// Noise scale of topic word vectors around their topic centre; larger
    /// values make topics less coherent.
    pub vector_spread: f64,
    pub seed: u64,
}

impl Default for DisambiguationSpec {
    fn default() -> Self {
        Self {
            train_per_concept: 30,
            test_mentions: 174,
            context_words: 10,
            topic_prob: 0.45,
            cross_prob: 0.08,
            distinct_topics: true,
            vector_spread: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DisambiguationCorpus {
    pub rows: Vec<ConceptRow>,
    pub concept_ids: [String; 2],
    /// Training documents per concept, each mentioning the concept by its
    /// unique long-form name.
    pub train: [Vec<String>; 2],
    /// Test documents mentioning the shared abbreviation, with gold.
    pub test: Vec<(String, GoldMention)>,
}

impl DisambiguationCorpus {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.train
            .iter()
            .flatten()
            .map(String::as_str)
            .chain(self.test.iter().map(|(t, _)| t.as_str()))
    }
}

fn context<R: Rng>(rng: &mut R, n: usize, own: &[&str], other: &[&str], spec: &DisambiguationSpec) -> Vec<String> {
    (0..n)
        .map(|_| {
            let x: f64 = rng.gen();
            let pool = if x < spec.topic_prob {
                own
            } else if x < spec.topic_prob + spec.cross_prob {
                other
            } else {
                FILLER
            };
            pool.choose(rng).expect("non-empty pool").to_string()
        })
        .collect()
}

fn sentence(left: &[String], mention: &str, right: &[String]) -> (String, usize, usize) {
    let mut text = left.join(" ");
    if !text.is_empty() {
        text.push(' ');
    }
    let start = text.chars().count();
    text.push_str(mention);
    let end = text.chars().count();
    if !right.is_empty() {
        text.push(' ');
        text.push_str(&right.join(" "));
    }
    text.push('.');
    (text, start, end)
}

pub fn disambiguation_corpus(spec: &DisambiguationSpec) -> DisambiguationCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ids = ["C0018810".to_string(), "C2985465".to_string()];
    let mut rows = Vec::new();
    for (id, name) in [(&ids[0], "heart rate"), (&ids[1], "hazard ratio")] {
        let mut row = ConceptRow::new(id, name);
        row.name_status = "P".into();
        rows.push(row);
        let mut abbr = ConceptRow::new(id, "HR");
        abbr.name_status = "A".into();
        rows.push(abbr);
    }
    let pooled: Vec<&str> = TOPIC_A.iter().chain(TOPIC_B).copied().collect();
    let topics: [(&[&str], &[&str]); 2] = if spec.distinct_topics {
        [(TOPIC_A, TOPIC_B), (TOPIC_B, TOPIC_A)]
    } else {
        [(&pooled, &pooled), (&pooled, &pooled)]
    };
    let n = spec.context_words;
    let mut train: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for (c, long_name) in ["heart rate", "hazard ratio"].iter().enumerate() {
        for _ in 0..spec.train_per_concept {
            let (own, other) = topics[c];
            let left = context(&mut rng, n, own, other, spec);
            let right = context(&mut rng, n, own, other, spec);
            train[c].push(sentence(&left, long_name, &right).0);
        }
    }
    let test = (0..spec.test_mentions)
        .map(|i| {
            let c = i % 2;
            let (own, other) = topics[c];
            let left = context(&mut rng, n, own, other, spec);
            let right = context(&mut rng, n, own, other, spec);
            let (text, start, end) = sentence(&left, "HR", &right);
            (
                text,
                GoldMention {
                    start,
                    end,
                    concept_id: ids[c].clone(),
                },
            )
        })
        .collect();
    DisambiguationCorpus {
        rows,
        concept_ids: ids,
        train,
        test,
    }
}

const NEG_TEMPLATES: &[&str] = &[
    "patient denies {}",
    "no evidence of {}",
    "there is no {} today",
    "negative for {}",
    "{} was ruled out",
    "without any {}",
    "no signs of {} on examination",
    "free of {} since discharge",
];

const AFF_TEMPLATES: &[&str] = &[
    "patient reports {}",
    "evidence of {}",
    "there is marked {} today",
    "positive for {}",
    "{} was confirmed",
    "presents with {}",
    "signs of {} on examination",
    "ongoing {} since discharge",
];

const NEG_CONDITIONS: &[&str] = &[
    "chest pain", "fever", "cough", "nausea", "headache", "dyspnoea", "oedema", "rash",
    "syncope", "fatigue", "seizure", "vomiting", "diarrhoea", "dizziness", "anaemia", "jaundice",
];

/// Labelled export for a binary negation task named `Negation` with labels
/// `Affirmed` and `Negated`. Conditions are annotated with ids `N0`, `N1`, ...
pub fn negation_export(n_docs: usize, seed: u64) -> AnnotationExport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let documents = (0..n_docs)
        .map(|i| {
            let negated = rng.gen_bool(0.5);
            let templates = if negated { NEG_TEMPLATES } else { AFF_TEMPLATES };
            let template = templates.choose(&mut rng).expect("templates");
            let c = rng.gen_range(0..NEG_CONDITIONS.len());
            let (before, after) = template.split_once("{}").expect("placeholder");
            let text = format!("{before}{}{after}.", NEG_CONDITIONS[c]);
            let start = before.chars().count();
            let end = start + NEG_CONDITIONS[c].chars().count();
            ExportDocument {
                doc_id: format!("neg-{i}"),
                text,
                annotations: vec![ExportAnnotation {
                    start,
                    end,
                    cui: format!("N{c}"),
                    correct: true,
                    killed: false,
                    manually_added: false,
                    meta: BTreeMap::from([(
                        "Negation".to_string(),
                        if negated { "Negated" } else { "Affirmed" }.to_string(),
                    )]),
                    annotator: None,
                }],
            }
        })
        .collect();
    AnnotationExport {
        schema_version: EXPORT_SCHEMA_VERSION,
        projects: vec![ExportProject {
            id: "negation".into(),
            name: "negation".into(),
            documents,
        }],
    }
}

/// Dictionary rows for the negation corpus conditions.
pub fn negation_rows() -> Vec<ConceptRow> {
    NEG_CONDITIONS
        .iter()
        .enumerate()
        .map(|(i, n)| ConceptRow::new(&format!("N{i}"), n))
        .collect()
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cl",
    "dr", "gr", "pl", "st", "tr", "sk",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ae", "io", "ou"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "l", "x", "m"];

/// Large dictionary and text for throughput measurement.
#[derive(Debug, Clone)]
pub struct ThroughputFixture {
    pub rows: Vec<ConceptRow>,
    pub documents: Vec<String>,
}

impl ThroughputFixture {
    pub fn total_bytes(&self) -> usize {
        self.documents.iter().map(|d| d.len() + 1).sum()
    }
}

fn pseudo_lexicon<R: Rng>(rng: &mut R, n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=4);
        let w: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}{}",
                    ONSETS.choose(rng).expect("onsets"),
                    NUCLEI.choose(rng).expect("nuclei"),
                    CODAS.choose(rng).expect("codas")
                )
            })
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// `n_names` dictionary names over `n_names` concepts (about 5% of names
/// shared between two concepts) and roughly `target_bytes` of text in
/// documents of about 2 KB. About one word in twelve starts a dictionary name.
pub fn throughput_fixture(n_names: usize, target_bytes: usize, seed: u64) -> ThroughputFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon = pseudo_lexicon(&mut rng, 8000);
    let mut names: Vec<String> = Vec::with_capacity(n_names);
    let mut rows = Vec::with_capacity(n_names);
    for i in 0..n_names {
        let id = format!("S{i:05}");
        let name = if i > 0 && rng.gen_bool(0.05) {
            names[rng.gen_range(0..names.len())].clone()
        } else {
            let len = rng.gen_range(1..=3);
            (0..len)
                .map(|_| lexicon.choose(&mut rng).expect("lexicon").as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        rows.push(ConceptRow::new(&id, &name));
        names.push(name);
    }
    let mut documents = Vec::new();
    let mut total = 0;
    while total < target_bytes {
        let mut doc = String::with_capacity(2100);
        let mut words = 0;
        while doc.len() < 2000 {
            if !doc.is_empty() {
                doc.push(' ');
            }
            if rng.gen_bool(1.0 / 12.0) {
                doc.push_str(names.choose(&mut rng).expect("names"));
            } else if rng.gen_bool(0.3) {
                doc.push_str(FILLER.choose(&mut rng).expect("filler"));
            } else {
                doc.push_str(lexicon.choose(&mut rng).expect("lexicon"));
            }
            words += 1;
            if words % 14 == 0 {
                doc.push('.');
            }
        }
        total += doc.len() + 1;
        documents.push(doc);
    }
    ThroughputFixture { rows, documents }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disambiguation_gold_spans_point_at_abbreviation() {
        let c = disambiguation_corpus(&DisambiguationSpec::default());
        assert_eq!(c.test.len(), 174);
        assert_eq!(c.train[0].len(), 30);
        for (text, g) in &c.test {
            let s: String = text.chars().skip(g.start).take(g.end - g.start).collect();
            assert_eq!(s, "HR");
        }
        assert!(c.train[0].iter().all(|t| t.contains("heart rate")));
    }

    #[test]
    fn generators_are_seeded() {
        let spec = DisambiguationSpec::default();
        assert_eq!(disambiguation_corpus(&spec).test, disambiguation_corpus(&spec).test);
        assert_eq!(negation_export(20, 3), negation_export(20, 3));
        let a = throughput_fixture(100, 10_000, 1);
        assert_eq!(a.documents, throughput_fixture(100, 10_000, 1).documents);
        assert!(a.total_bytes() >= 10_000);
    }

    #[test]
    fn negation_export_validates() {
        let e = negation_export(30, 0);
        e.validate().unwrap();
        let d = &e.projects[0].documents[0];
        let a = &d.annotations[0];
        let s: String = d.text.chars().skip(a.start).take(a.end - a.start).collect();
        assert!(NEG_CONDITIONS.contains(&s.as_str()));
    }
}
