//! Meta-annotation: per-task classification of a linked mention's context
//! (negation, experiencer, temporality, ...).
//!
//! The classifier is a single-layer bidirectional LSTM over frozen word
//! vectors. Hidden states of both directions are mean-pooled over time and
//! fed to a linear softmax head. The mention itself is replaced by a generic
//! placeholder token so the model never sees which concept it is looking at.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::export::AnnotationExport;
use crate::text::TokenizedDocument;
use crate::trainer::span_tokens;
use crate::vocab::Vocabulary;

pub const DEFAULT_REPLACE_TOKEN: &str = "[concept]";
const META_MAGIC: &[u8; 8] = b"CLNKMETA";
const META_VERSION: u32 = 1;

fn default_window() -> usize {
    15
}

fn default_replace() -> String {
    DEFAULT_REPLACE_TOKEN.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaTask {
    pub name: String,
    pub labels: Vec<String>,
    #[serde(default = "default_window")]
    pub context_window: usize,
    #[serde(default = "default_replace")]
    pub replace_token: String,
}

impl MetaTask {
    pub fn new(name: &str, labels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            context_window: default_window(),
            replace_token: default_replace(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidTask("empty task name".into()));
        }
        let distinct: BTreeSet<_> = self.labels.iter().collect();
        if self.labels.len() < 2 || distinct.len() != self.labels.len() {
            return Err(Error::InvalidTask(format!(
                "task '{}' needs at least two distinct labels",
                self.name
            )));
        }
        if self.context_window == 0 {
            return Err(Error::InvalidTask("context_window must be >= 1".into()));
        }
        if self.replace_token.is_empty() {
            return Err(Error::InvalidTask("empty replace_token".into()));
        }
        Ok(())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaExample {
    pub token_norms: Vec<String>,
    pub label: String,
}

/// Word window around tokens `span`, with the mention collapsed into the
/// placeholder. Punctuation is dropped.
pub fn context_window(doc: &TokenizedDocument, span: (usize, usize), task: &MetaTask) -> Vec<String> {
    let (first, last) = span;
    let word = |i: &usize| doc.tokens[*i].is_word();
    let mut left: Vec<usize> = (0..first).rev().filter(word).take(task.context_window).collect();
    left.reverse();
    let right = (last + 1..doc.tokens.len())
        .filter(word)
        .take(task.context_window);
    let mut out: Vec<String> = left.iter().map(|&i| doc.tokens[i].norm.clone()).collect();
    out.push(task.replace_token.clone());
    out.extend(right.map(|i| doc.tokens[i].norm.clone()));
    out
}

/// Training examples for `task` from correct, labelled annotations.
/// Returned in a seeded shuffled order.
pub fn build_examples(
    export: &AnnotationExport,
    task: &MetaTask,
    engine: &Engine,
    seed: u64,
) -> Vec<MetaExample> {
    let mut out = Vec::new();
    for project in &export.projects {
        for document in &project.documents {
            let labelled: Vec<_> = document
                .annotations
                .iter()
                .filter(|a| a.correct && !a.killed)
                .filter_map(|a| {
                    let label = a.meta.get(&task.name)?;
                    task.label_index(label)?;
                    Some((a, label))
                })
                .collect();
            if labelled.is_empty() {
                continue;
            }
            let doc = engine.process(&document.doc_id, &document.text);
            for (a, label) in labelled {
                if let Some(span) = span_tokens(&doc, a.start, a.end) {
                    out.push(MetaExample {
                        token_norms: context_window(&doc, span, task),
                        label: label.clone(),
                    });
                }
            }
        }
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaHyper {
    pub epochs: usize,
    pub lr: f64,
    pub hidden_dim: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub test_fraction: f64,
}

impl Default for MetaHyper {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.01,
            hidden_dim: 64,
            seed: 0,
            clip_norm: 5.0,
            test_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaPrediction {
    pub label: String,
    pub probabilities: Vec<f64>,
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    input: usize,
    hidden: usize,
    labels: usize,
}

impl Layout {
    fn lstm_w_len(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden)
    }
    fn lstm_len(&self) -> usize {
        self.lstm_w_len() + 4 * self.hidden
    }
    /// (weights, bias) of direction 0 (forward) or 1 (backward).
    fn lstm(&self, dir: usize) -> (Range<usize>, Range<usize>) {
        let base = dir * self.lstm_len();
        let w = base..base + self.lstm_w_len();
        (w.clone(), w.end..w.end + 4 * self.hidden)
    }
    fn out_w(&self) -> Range<usize> {
        let base = 2 * self.lstm_len();
        base..base + self.labels * 2 * self.hidden
    }
    fn out_b(&self) -> Range<usize> {
        let w = self.out_w();
        w.end..w.end + self.labels
    }
    fn total(&self) -> usize {
        self.out_b().end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    pub task: MetaTask,
    pub input_dim: usize,
    pub hidden_dim: usize,
    params: Vec<f64>,
    pub label_priors: Vec<f64>,
    /// False until at least one epoch ran; untrained models predict the priors.
    pub trained: bool,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Step {
    input: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct Forward {
    pooled: Vec<f64>,
    probs: Vec<f64>,
    steps: [Vec<Step>; 2],
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl MetaModel {
    /// Fresh model with seeded uniform weights in `±1/sqrt(hidden)` and a
    /// forget-gate bias of one.
    pub fn new(task: MetaTask, input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        task.validate()?;
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be >= 1".into()));
        }
        let layout = Layout {
            input: input_dim,
            hidden: hidden_dim,
            labels: task.labels.len(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (hidden_dim as f64).sqrt();
        let mut params: Vec<f64> = (0..layout.total())
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        for dir in 0..2 {
            let (_, b) = layout.lstm(dir);
            let h = hidden_dim;
            for (k, p) in params[b].iter_mut().enumerate() {
                *p = if (h..2 * h).contains(&k) { 1.0 } else { 0.0 };
            }
        }
        params[layout.out_b()].iter_mut().for_each(|p| *p = 0.0);
        let n = task.labels.len();
        Ok(Self {
            task,
            input_dim,
            hidden_dim,
            params,
            label_priors: vec![1.0 / n as f64; n],
            trained: false,
        })
    }

    fn layout(&self) -> Layout {
        Layout {
            input: self.input_dim,
            hidden: self.hidden_dim,
            labels: self.task.labels.len(),
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn lstm_forward(&self, dir: usize, inputs: &[&[f64]]) -> (Vec<f64>, Vec<Step>) {
        let l = self.layout();
        let (d, h) = (l.input, l.hidden);
        let (wr, br) = l.lstm(dir);
        let (w, b) = (&self.params[wr], &self.params[br]);
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut sum_h = vec![0.0; h];
        let mut steps = Vec::with_capacity(inputs.len());
        let order: Vec<usize> = if dir == 0 {
            (0..inputs.len()).collect()
        } else {
            (0..inputs.len()).rev().collect()
        };
        for t in order {
            let mut input = Vec::with_capacity(d + h);
            input.extend_from_slice(inputs[t]);
            input.extend_from_slice(&hs);
            let mut z = b.to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &w[r * (d + h)..(r + 1) * (d + h)];
                *zr += row.iter().zip(&input).map(|(a, x)| a * x).sum::<f64>();
            }
            let i: Vec<f64> = z[..h].iter().map(|&x| sigmoid(x)).collect();
            let f: Vec<f64> = z[h..2 * h].iter().map(|&x| sigmoid(x)).collect();
            let g: Vec<f64> = z[2 * h..3 * h].iter().map(|&x| x.tanh()).collect();
            let o: Vec<f64> = z[3 * h..].iter().map(|&x| sigmoid(x)).collect();
            let c_prev = cs.clone();
            for k in 0..h {
                cs[k] = f[k] * c_prev[k] + i[k] * g[k];
            }
            let tanh_c: Vec<f64> = cs.iter().map(|x| x.tanh()).collect();
            for k in 0..h {
                hs[k] = o[k] * tanh_c[k];
                sum_h[k] += hs[k];
            }
            steps.push(Step {
                input,
                i,
                f,
                g,
                o,
                c_prev,
                tanh_c,
            });
        }
        (sum_h, steps)
    }

    fn forward(&self, inputs: &[&[f64]]) -> Forward {
        let l = self.layout();
        let t = inputs.len().max(1) as f64;
        let (sum_f, steps_f) = self.lstm_forward(0, inputs);
        let (sum_b, steps_b) = self.lstm_forward(1, inputs);
        let pooled: Vec<f64> = sum_f.iter().chain(&sum_b).map(|x| x / t).collect();
        let w = &self.params[l.out_w()];
        let b = &self.params[l.out_b()];
        let logits: Vec<f64> = (0..l.labels)
            .map(|c| {
                b[c] + w[c * 2 * l.hidden..(c + 1) * 2 * l.hidden]
                    .iter()
                    .zip(&pooled)
                    .map(|(a, x)| a * x)
                    .sum::<f64>()
            })
            .collect();
        Forward {
            pooled,
            probs: softmax(&logits),
            steps: [steps_f, steps_b],
        }
    }

    fn lstm_backward(&self, dir: usize, steps: &[Step], dh_each: &[f64], grad: &mut [f64]) {
        let l = self.layout();
        let (d, h) = (l.input, l.hidden);
        let (wr, br) = l.lstm(dir);
        let w = &self.params[wr.clone()];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for step in steps.iter().rev() {
            for k in 0..h {
                let dh = dh_each[k] + dh_next[k];
                let d_o = dh * step.tanh_c[k];
                let dc = dh * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]) + dc_next[k];
                let di = dc * step.g[k];
                let dg = dc * step.i[k];
                let df = dc * step.c_prev[k];
                dc_next[k] = dc * step.f[k];
                dz[k] = di * step.i[k] * (1.0 - step.i[k]);
                dz[h + k] = df * step.f[k] * (1.0 - step.f[k]);
                dz[2 * h + k] = dg * (1.0 - step.g[k] * step.g[k]);
                dz[3 * h + k] = d_o * step.o[k] * (1.0 - step.o[k]);
            }
            dh_next.iter_mut().for_each(|x| *x = 0.0);
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                let row = r * (d + h);
                let gw = &mut grad[wr.start + row..wr.start + row + d + h];
                for (gk, x) in gw.iter_mut().zip(&step.input) {
                    *gk += dzr * x;
                }
                grad[br.start + r] += dzr;
                for k in 0..h {
                    dh_next[k] += w[row + d + k] * dzr;
                }
            }
        }
    }

    /// Cross-entropy loss of one example and its gradient with respect to
    /// every parameter (same layout as [`MetaModel::params`]).
    pub fn loss_and_grad(&self, inputs: &[&[f64]], label: usize) -> (f64, Vec<f64>) {
        let l = self.layout();
        let fwd = self.forward(inputs);
        let loss = -fwd.probs[label].max(1e-300).ln();
        let mut grad = vec![0.0; self.params.len()];
        let mut dlogits = fwd.probs.clone();
        dlogits[label] -= 1.0;
        let ow = l.out_w();
        let two_h = 2 * l.hidden;
        let mut dpooled = vec![0.0; two_h];
        for (c, &dl) in dlogits.iter().enumerate() {
            grad[l.out_b().start + c] += dl;
            for k in 0..two_h {
                grad[ow.start + c * two_h + k] += dl * fwd.pooled[k];
                dpooled[k] += self.params[ow.start + c * two_h + k] * dl;
            }
        }
        let t = inputs.len().max(1) as f64;
        let dh_f: Vec<f64> = dpooled[..l.hidden].iter().map(|x| x / t).collect();
        let dh_b: Vec<f64> = dpooled[l.hidden..].iter().map(|x| x / t).collect();
        self.lstm_backward(0, &fwd.steps[0], &dh_f, &mut grad);
        self.lstm_backward(1, &fwd.steps[1], &dh_b, &mut grad);
        (loss, grad)
    }

    /// Class probabilities for a token window.
    pub fn probabilities(&self, inputs: &[&[f64]]) -> Vec<f64> {
        if !self.trained || inputs.is_empty() {
            return self.label_priors.clone();
        }
        self.forward(inputs).probs
    }

    fn embed<'v>(tokens: &[String], vocab: &'v Vocabulary) -> Vec<std::borrow::Cow<'v, [f64]>> {
        tokens.iter().map(|t| vocab.vector(t)).collect()
    }

    pub fn predict_tokens(&self, tokens: &[String], vocab: &Vocabulary) -> MetaPrediction {
        let vecs = Self::embed(tokens, vocab);
        let inputs: Vec<&[f64]> = vecs.iter().map(|v| v.as_ref()).collect();
        let probabilities = self.probabilities(&inputs);
        let best = argmax(&probabilities);
        MetaPrediction {
            label: self.task.labels[best].clone(),
            probabilities,
        }
    }

    /// Label the mention covering tokens `span` of `doc`.
    pub fn predict(&self, doc: &TokenizedDocument, span: (usize, usize), vocab: &Vocabulary) -> MetaPrediction {
        self.predict_tokens(&context_window(doc, span, &self.task), vocab)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        fn put_str(out: &mut Vec<u8>, s: &str) {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        let mut out = Vec::new();
        out.extend_from_slice(META_MAGIC);
        out.extend_from_slice(&META_VERSION.to_le_bytes());
        put_str(&mut out, &self.task.name);
        out.extend_from_slice(&(self.task.labels.len() as u32).to_le_bytes());
        for label in &self.task.labels {
            put_str(&mut out, label);
        }
        out.extend_from_slice(&(self.task.context_window as u32).to_le_bytes());
        put_str(&mut out, &self.task.replace_token);
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden_dim as u32).to_le_bytes());
        out.push(u8::from(self.trained));
        for x in self.label_priors.iter().chain(&self.params) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        struct Cursor<'a>(&'a [u8]);
        impl<'a> Cursor<'a> {
            fn take(&mut self, n: usize) -> Result<&'a [u8]> {
                if self.0.len() < n {
                    return Err(Error::Corrupt("meta model truncated".into()));
                }
                let (head, tail) = self.0.split_at(n);
                self.0 = tail;
                Ok(head)
            }
            fn u32(&mut self) -> Result<u32> {
                Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
            }
            fn f64(&mut self) -> Result<f64> {
                Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
            }
            fn string(&mut self) -> Result<String> {
                let n = self.u32()? as usize;
                String::from_utf8(self.take(n)?.to_vec())
                    .map_err(|_| Error::Corrupt("invalid utf-8 in meta model".into()))
            }
        }
        let mut cur = Cursor(bytes);
        if cur.take(8)? != META_MAGIC {
            return Err(Error::Corrupt("bad meta model magic".into()));
        }
        let version = cur.u32()?;
        if version != META_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: META_VERSION,
            });
        }
        let name = cur.string()?;
        let n_labels = cur.u32()? as usize;
        if n_labels > 1 << 16 {
            return Err(Error::Corrupt("implausible label count".into()));
        }
        let labels = (0..n_labels)
            .map(|_| cur.string())
            .collect::<Result<Vec<_>>>()?;
        let context_window = cur.u32()? as usize;
        let replace_token = cur.string()?;
        let input_dim = cur.u32()? as usize;
        let hidden_dim = cur.u32()? as usize;
        let trained = cur.take(1)?[0] != 0;
        let task = MetaTask {
            name,
            labels,
            context_window,
            replace_token,
        };
        task.validate()
            .map_err(|e| Error::Corrupt(format!("invalid task in meta model: {e}")))?;
        let layout = Layout {
            input: input_dim,
            hidden: hidden_dim,
            labels: n_labels,
        };
        let n = n_labels + layout.total();
        if cur.0.len() != n * 8 {
            return Err(Error::Corrupt(format!(
                "expected {} weight bytes, found {}",
                n * 8,
                cur.0.len()
            )));
        }
        let label_priors = (0..n_labels).map(|_| cur.f64()).collect::<Result<_>>()?;
        let params = (0..layout.total()).map(|_| cur.f64()).collect::<Result<_>>()?;
        Ok(Self {
            task,
            input_dim,
            hidden_dim,
            params,
            label_priors,
            trained,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Macro- and support-weighted F1 over `n_labels` classes.
pub fn f1_scores(gold: &[usize], pred: &[usize], n_labels: usize) -> (f64, f64) {
    let mut tp = vec![0usize; n_labels];
    let mut fp = vec![0usize; n_labels];
    let mut fn_ = vec![0usize; n_labels];
    for (&g, &p) in gold.iter().zip(pred) {
        if g == p {
            tp[g] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let present: Vec<usize> = (0..n_labels)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .collect();
    if present.is_empty() {
        return (0.0, 0.0);
    }
    let f1 = |c: usize| {
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        }
    };
    let macro_f1 = present.iter().map(|&c| f1(c)).sum::<f64>() / present.len() as f64;
    let support: usize = gold.len();
    let weighted = if support == 0 {
        0.0
    } else {
        (0..n_labels)
            .map(|c| f1(c) * (tp[c] + fn_[c]) as f64)
            .sum::<f64>()
            / support as f64
    };
    (macro_f1, weighted)
}

/// Trained model plus per-epoch train/test metrics.
#[derive(Debug, Clone)]
pub struct MetaTraining {
    pub model: MetaModel,
    pub metrics: Vec<EpochMetrics>,
    pub train_size: usize,
    pub test_size: usize,
}

fn evaluate(model: &MetaModel, data: &[(Vec<&[f64]>, usize)], epoch: usize, split: &str) -> EpochMetrics {
    let mut loss = 0.0;
    let mut gold = Vec::with_capacity(data.len());
    let mut pred = Vec::with_capacity(data.len());
    for (inputs, label) in data {
        let probs = model.probabilities(inputs);
        loss -= probs[*label].max(1e-300).ln();
        gold.push(*label);
        pred.push(argmax(&probs));
    }
    let (macro_f1, weighted_f1) = f1_scores(&gold, &pred, model.task.labels.len());
    EpochMetrics {
        epoch,
        split: split.to_string(),
        loss: if data.is_empty() { 0.0 } else { loss / data.len() as f64 },
        macro_f1,
        weighted_f1,
    }
}

/// Train a classifier for `task` by per-example gradient descent with global
/// norm clipping. A seeded `test_fraction` of the examples is held out.
pub fn train_meta(
    examples: &[MetaExample],
    task: &MetaTask,
    hyper: &MetaHyper,
    vocab: &Vocabulary,
) -> Result<MetaTraining> {
    task.validate()?;
    let labelled: Vec<(usize, &MetaExample)> = examples
        .iter()
        .filter_map(|e| task.label_index(&e.label).map(|l| (l, e)))
        .collect();
    let distinct: BTreeSet<usize> = labelled.iter().map(|(l, _)| *l).collect();
    if distinct.len() < 2 {
        return Err(Error::DegenerateTask {
            task: task.name.clone(),
        });
    }
    let mut model = MetaModel::new(task.clone(), vocab.dim(), hyper.hidden_dim, hyper.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));

    let mut cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (_, e) in &labelled {
        for t in &e.token_norms {
            cache
                .entry(t.as_str())
                .or_insert_with(|| vocab.vector(t).into_owned());
        }
    }
    let encoded: Vec<(Vec<&[f64]>, usize)> = labelled
        .iter()
        .map(|(l, e)| {
            (
                e.token_norms.iter().map(|t| cache[t.as_str()].as_slice()).collect(),
                *l,
            )
        })
        .collect();

    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    let n_test = ((encoded.len() as f64) * hyper.test_fraction).round() as usize;
    let n_test = n_test.min(encoded.len().saturating_sub(1));
    let (test_idx, train_idx) = order.split_at(n_test);
    let train: Vec<(Vec<&[f64]>, usize)> = train_idx.iter().map(|&i| encoded[i].clone()).collect();
    let test: Vec<(Vec<&[f64]>, usize)> = test_idx.iter().map(|&i| encoded[i].clone()).collect();

    let mut priors = vec![0.0; task.labels.len()];
    for (_, l) in &train {
        priors[*l] += 1.0;
    }
    let total: f64 = priors.iter().sum();
    priors.iter_mut().for_each(|p| *p /= total);
    model.label_priors = priors;

    let mut metrics = Vec::new();
    let mut step_order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=hyper.epochs {
        model.trained = true;
        step_order.shuffle(&mut rng);
        for &i in &step_order {
            let (inputs, label) = &train[i];
            let (_, mut grad) = model.loss_and_grad(inputs, *label);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > hyper.clip_norm && norm > 0.0 {
                let s = hyper.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            for (p, g) in model.params.iter_mut().zip(&grad) {
                *p -= hyper.lr * g;
            }
        }
        metrics.push(evaluate(&model, &train, epoch, "train"));
        metrics.push(evaluate(&model, &test, epoch, "test"));
    }
    Ok(MetaTraining {
        model,
        metrics,
        train_size: train.len(),
        test_size: test.len(),
    })
}
