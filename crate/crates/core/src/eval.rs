//! Exact-match scoring of predicted annotations against a gold corpus.
//!
//! A prediction is a true positive only when its character span equals a
//! gold span and it is linked to the gold concept. A right span with the
//! wrong concept therefore counts as one false positive and one false
//! negative. Group-level scoring treats every member of a group (and the
//! group id itself) as interchangeable.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::AnnotationRecord;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoldMention {
    pub start: usize,
    pub end: usize,
    pub concept_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldDocument {
    pub doc_id: String,
    pub text: Option<String>,
    pub gold_mentions: Vec<GoldMention>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GoldCorpus {
    pub documents: Vec<GoldDocument>,
}

impl GoldCorpus {
    /// Gold corpus from annotation records. Duplicate triples are collapsed
    /// and spans are checked against the text when it is present.
    pub fn from_records(records: &[AnnotationRecord]) -> Result<Self> {
        let mut documents = Vec::with_capacity(records.len());
        for r in records {
            let set: BTreeSet<GoldMention> = r
                .mentions
                .iter()
                .map(|m| GoldMention {
                    start: m.start,
                    end: m.end,
                    concept_id: m.cui.clone(),
                })
                .collect();
            if let Some(text) = &r.text {
                let len = text.chars().count();
                if let Some(bad) = set.iter().find(|m| m.start >= m.end || m.end > len) {
                    return Err(Error::InvalidConfig(format!(
                        "gold document '{}': span {}..{} outside text",
                        r.doc_id, bad.start, bad.end
                    )));
                }
            }
            documents.push(GoldDocument {
                doc_id: r.doc_id.clone(),
                text: r.text.clone(),
                gold_mentions: set.into_iter().collect(),
            });
        }
        Ok(Self { documents })
    }
}

/// Concept groups: group id → member concept ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Groups(pub BTreeMap<String, BTreeSet<String>>);

impl Groups {
    /// Parse lines of `group_id: member_id, member_id, ...`. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut groups = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, members) = line.split_once(':').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected 'group_id: member, member, ...'".into(),
            })?;
            let id = id.trim();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty group id".into(),
                });
            }
            let set: &mut BTreeSet<String> = groups.entry(id.to_string()).or_default();
            set.extend(
                members
                    .split(',')
                    .map(str::trim)
                    .filter(|m| !m.is_empty())
                    .map(String::from),
            );
        }
        Ok(Self(groups))
    }

    fn contains(&self, group: &str, concept: &str) -> bool {
        group == concept || self.0.get(group).is_some_and(|m| m.contains(concept))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Counts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_concept: BTreeMap<String, Counts>,
    pub per_group: BTreeMap<String, Counts>,
    pub micro: Counts,
    #[serde(rename = "macro")]
    pub macro_scores: MacroScores,
    /// Summary of F1 across groups (or concepts when no groups are given).
    pub mean_f1: f64,
    pub sd_f1: f64,
    pub iqr_f1: f64,
}

/// Sample standard deviation (n - 1); zero below two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

/// Linear-interpolation quantile of `q` in [0, 1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn match_spans<K: Eq + std::hash::Hash + Clone>(
    gold: &[K],
    pred: &[K],
) -> (u64, u64, u64) {
    let mut open: HashMap<K, u64> = HashMap::new();
    for g in gold {
        *open.entry(g.clone()).or_default() += 1;
    }
    let (mut tp, mut fp) = (0, 0);
    for p in pred {
        match open.get_mut(p) {
            Some(n) if *n > 0 => {
                *n -= 1;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    (tp, fp, gold.len() as u64 - tp)
}

/// Score predictions against gold. Every document must appear on both sides.
pub fn score(pred: &[AnnotationRecord], gold: &GoldCorpus, groups: &Groups) -> Result<MetricReport> {
    let pred_ids: BTreeSet<&str> = pred.iter().map(|r| r.doc_id.as_str()).collect();
    let gold_ids: BTreeSet<&str> = gold.documents.iter().map(|d| d.doc_id.as_str()).collect();
    let missing: Vec<String> = pred_ids
        .symmetric_difference(&gold_ids)
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::DocumentMismatch(missing));
    }

    let mut pred_by_doc: BTreeMap<&str, Vec<(usize, usize, &str)>> = BTreeMap::new();
    for r in pred {
        pred_by_doc
            .entry(r.doc_id.as_str())
            .or_default()
            .extend(r.mentions.iter().map(|m| (m.start, m.end, m.cui.as_str())));
    }
    let mut gold_by_doc: BTreeMap<&str, BTreeSet<(usize, usize, &str)>> = BTreeMap::new();
    for d in &gold.documents {
        gold_by_doc
            .entry(d.doc_id.as_str())
            .or_default()
            .extend(d.gold_mentions.iter().map(|m| (m.start, m.end, m.concept_id.as_str())));
    }

    let mut concept_counts: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    let mut group_counts: BTreeMap<String, (u64, u64, u64)> =
        groups.0.keys().map(|g| (g.clone(), (0, 0, 0))).collect();
    let empty = Vec::new();
    for (doc, gold_set) in &gold_by_doc {
        let preds = pred_by_doc.get(doc).unwrap_or(&empty);
        let gold_list: Vec<(usize, usize, &str)> = gold_set.iter().cloned().collect();
        let concepts: BTreeSet<&str> = gold_list
            .iter()
            .map(|g| g.2)
            .chain(preds.iter().map(|p| p.2))
            .collect();
        for c in concepts {
            let g: Vec<_> = gold_list.iter().filter(|m| m.2 == c).cloned().collect();
            let p: Vec<_> = preds.iter().filter(|m| m.2 == c).cloned().collect();
            let (tp, fp, fn_) = match_spans(&g, &p);
            let e = concept_counts.entry(c.to_string()).or_default();
            e.0 += tp;
            e.1 += fp;
            e.2 += fn_;
        }
        for group in groups.0.keys() {
            let g: Vec<(usize, usize)> = gold_list
                .iter()
                .filter(|m| groups.contains(group, m.2))
                .map(|m| (m.0, m.1))
                .collect();
            let p: Vec<(usize, usize)> = preds
                .iter()
                .filter(|m| groups.contains(group, m.2))
                .map(|m| (m.0, m.1))
                .collect();
            let (tp, fp, fn_) = match_spans(&g, &p);
            let e = group_counts.get_mut(group).expect("group initialised");
            e.0 += tp;
            e.1 += fp;
            e.2 += fn_;
        }
    }

    let per_concept: BTreeMap<String, Counts> = concept_counts
        .into_iter()
        .map(|(c, (tp, fp, fn_))| (c, Counts::new(tp, fp, fn_)))
        .collect();
    let per_group: BTreeMap<String, Counts> = group_counts
        .into_iter()
        .map(|(g, (tp, fp, fn_))| (g, Counts::new(tp, fp, fn_)))
        .collect();
    let (tp, fp, fn_) = per_concept
        .values()
        .fold((0, 0, 0), |a, c| (a.0 + c.tp, a.1 + c.fp, a.2 + c.fn_));
    let n = per_concept.len().max(1) as f64;
    let macro_scores = MacroScores {
        precision: per_concept.values().map(|c| c.precision).sum::<f64>() / n,
        recall: per_concept.values().map(|c| c.recall).sum::<f64>() / n,
        f1: per_concept.values().map(|c| c.f1).sum::<f64>() / n,
    };
    let f1s: Vec<f64> = if per_group.is_empty() {
        per_concept.values().map(|c| c.f1).collect()
    } else {
        per_group.values().map(|c| c.f1).collect()
    };
    let mean_f1 = if f1s.is_empty() {
        0.0
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    };
    Ok(MetricReport {
        micro: Counts::new(tp, fp, fn_),
        macro_scores,
        mean_f1,
        sd_f1: std_dev(&f1s),
        iqr_f1: quantile(&f1s, 0.75) - quantile(&f1s, 0.25),
        per_concept,
        per_group,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::export::MentionRecord;

    fn rec(doc: &str, spans: &[(usize, usize, &str)]) -> AnnotationRecord {
        AnnotationRecord {
            doc_id: doc.into(),
            text_hash: String::new(),
            mentions: spans
                .iter()
                .map(|&(start, end, cui)| MentionRecord {
                    start,
                    end,
                    cui: cui.into(),
                    confidence: 1.0,
                    meta: BTreeMap::new(),
                    untrained: false,
                })
                .collect(),
            text: None,
            gold: None,
        }
    }

    #[test]
    fn identical_prediction_is_perfect() {
        let g = [rec("d", &[(0, 5, "C1"), (6, 9, "C2")])];
        let gold = GoldCorpus::from_records(&g).unwrap();
        let r = score(&g, &gold, &Groups::default()).unwrap();
        assert!(r.per_concept.values().all(|c| c.f1 == 1.0));
        assert_eq!(r.micro.f1, 1.0);
    }

    #[test]
    fn off_by_one_is_fp_and_fn() {
        let gold = GoldCorpus::from_records(&[rec("d", &[(0, 5, "C1")])]).unwrap();
        let r = score(&[rec("d", &[(0, 4, "C1")])], &gold, &Groups::default()).unwrap();
        let c = r.per_concept["C1"];
        assert_eq!((c.tp, c.fp, c.fn_), (0, 1, 1));
    }

    #[test]
    fn wrong_concept_two_thirds() {
        let gold = GoldCorpus::from_records(&[rec(
            "d",
            &[(0, 5, "C1"), (6, 9, "C1"), (10, 12, "C1")],
        )])
        .unwrap();
        let pred = [rec("d", &[(0, 5, "C1"), (6, 9, "C1"), (10, 12, "C2")])];
        let r = score(&pred, &gold, &Groups::default()).unwrap();
        let c = r.per_concept["C1"];
        assert!((c.precision - 1.0).abs() < 1e-12);
        assert_eq!((r.micro.tp, r.micro.fp, r.micro.fn_), (2, 1, 1));
        assert!((r.micro.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.micro.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.micro.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn doc_mismatch_is_an_error() {
        let gold = GoldCorpus::from_records(&[rec("a", &[])]).unwrap();
        match score(&[rec("b", &[])], &gold, &Groups::default()) {
            Err(Error::DocumentMismatch(ids)) => assert_eq!(ids, ["a", "b"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_predictions_only_match_once() {
        let gold = GoldCorpus::from_records(&[rec("d", &[(0, 5, "C1")])]).unwrap();
        let r = score(&[rec("d", &[(0, 5, "C1"), (0, 5, "C1")])], &gold, &Groups::default()).unwrap();
        let c = r.per_concept["C1"];
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
    }

    #[test]
    fn groups_parse_and_score() {
        let cfg = "# epilepsy container\nEPI: S-1, S-2\nAF: S-3\n";
        let groups = Groups::parse(cfg.as_bytes()).unwrap();
        assert_eq!(groups.0["EPI"].len(), 2);
        let gold = GoldCorpus::from_records(&[rec("d", &[(0, 5, "S-1"), (6, 9, "S-3")])]).unwrap();
        // S-2 for S-1 is a group-level hit but a concept-level miss.
        let r = score(&[rec("d", &[(0, 5, "S-2"), (6, 9, "S-3")])], &gold, &groups).unwrap();
        assert_eq!(r.per_group["EPI"].f1, 1.0);
        assert_eq!(r.per_concept["S-1"].f1, 0.0);
        assert_eq!(r.mean_f1, 1.0);
        assert!(Groups::parse("no colon".as_bytes()).is_err());
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.75), 3.25);
        assert!((std_dev(&[1.0, 2.0, 3.0, 4.0]) - 1.2909944487358056).abs() < 1e-12);
        assert_eq!(std_dev(&[5.0]), 0.0);
    }

    #[test]
    fn zero_over_zero_is_zero() {
        let c = Counts::new(0, 0, 0);
        assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
    }
}
