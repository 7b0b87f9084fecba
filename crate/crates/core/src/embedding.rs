//! Context embeddings and clamped cosine similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TokenizedDocument;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    Long,
    Short,
}

/// How the context average is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextMode {
    /// Mention words are included and the divisor is the number of words used.
    #[default]
    Inclusive,
    /// Only the `s` words either side, always divided by `2s`.
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding {
    pub vector: Vec<f64>,
    pub scope: Scope,
    pub n_words_used: usize,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `max(0, cos(a, b))`; zero-norm inputs give 0 and identical inputs give
/// exactly 1 (rounding would otherwise leave a residual update).
pub fn cosine_sim_clamped(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    if a == b {
        return Ok(1.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(0.0, 1.0))
}

/// Token indices used for the context of the mention covering tokens
/// `first..=last`: up to `s` non-stopword words on each side and, in
/// inclusive mode, the mention's own words.
pub fn context_tokens(
    doc: &TokenizedDocument,
    (first, last): (usize, usize),
    s: usize,
    mode: ContextMode,
) -> Vec<usize> {
    let usable = |i: &usize| {
        let t = &doc.tokens[*i];
        t.is_word() && !t.is_stopword
    };
    let mut picked: Vec<usize> = (0..first).rev().filter(usable).take(s).collect();
    picked.reverse();
    if mode == ContextMode::Inclusive {
        let own: Vec<usize> = (first..=last).filter(usable).collect();
        if own.is_empty() {
            picked.extend((first..=last).filter(|i| doc.tokens[*i].is_word()));
        } else {
            picked.extend(own);
        }
    }
    picked.extend((last + 1..doc.tokens.len()).filter(usable).take(s));
    picked
}

/// Average word vector around a mention. Returns `None` when no usable word
/// exists.
pub fn compute_context(
    doc: &TokenizedDocument,
    span: (usize, usize),
    s: usize,
    scope: Scope,
    vocab: &Vocabulary,
    mode: ContextMode,
) -> Option<ContextEmbedding> {
    debug_assert!(span.0 <= span.1 && span.1 < doc.tokens.len());
    let idx = context_tokens(doc, span, s, mode);
    if idx.is_empty() {
        return None;
    }
    let mut sum = vec![0.0; vocab.dim()];
    for &i in &idx {
        let v = vocab.vector(&doc.tokens[i].norm);
        for (acc, x) in sum.iter_mut().zip(v.iter()) {
            *acc += x;
        }
    }
    let divisor = match mode {
        ContextMode::Inclusive => idx.len() as f64,
        ContextMode::Strict => (2 * s) as f64,
    };
    sum.iter_mut().for_each(|x| *x /= divisor);
    Some(ContextEmbedding {
        vector: sum,
        scope,
        n_words_used: idx.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn vocab_with(words: &[(&str, [f64; 2])]) -> Vocabulary {
        let mut v = Vocabulary::new(2);
        let mut file = format!("{} 2\n", words.len());
        for (w, vec) in words {
            v.add(w, 1);
            file.push_str(&format!("{w} {} {}\n", vec[0], vec[1]));
        }
        v.attach_vectors(file.as_bytes()).unwrap();
        v
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim_clamped(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim_clamped(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 0.0);
        let s = cosine_sim_clamped(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert_eq!(cosine_sim_clamped(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_sim_clamped(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_token_context_is_its_vector() {
        let vocab = vocab_with(&[("fever", [0.3, 0.4])]);
        let doc = tokenize("fever");
        let e = compute_context(&doc, (0, 0), 9, Scope::Long, &vocab, ContextMode::Inclusive)
            .unwrap();
        assert_eq!(e.vector, vec![0.3, 0.4]);
        assert_eq!(e.n_words_used, 1);
    }

    #[test]
    fn averages_neighbours_and_mention() {
        let vocab = vocab_with(&[
            ("aa", [1.0, 0.0]),
            ("bb", [0.0, 1.0]),
            ("mm", [2.0, 2.0]),
            ("cc", [3.0, 0.0]),
            ("dd", [0.0, 3.0]),
            ("ee", [9.0, 9.0]),
        ]);
        // "ee" lies outside the s=2 window; "the" is a stopword and skipped.
        let doc = tokenize("ee aa the bb mm cc dd ee");
        let e = compute_context(&doc, (4, 4), 2, Scope::Short, &vocab, ContextMode::Inclusive)
            .unwrap();
        assert_eq!(e.n_words_used, 5);
        assert!((e.vector[0] - 6.0 / 5.0).abs() < 1e-12);
        assert!((e.vector[1] - 6.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_at_document_start() {
        let vocab = vocab_with(&[("mm", [3.0, 0.0]), ("cc", [0.0, 3.0]), ("dd", [3.0, 3.0])]);
        let doc = tokenize("mm cc dd");
        let e = compute_context(&doc, (0, 0), 2, Scope::Short, &vocab, ContextMode::Inclusive)
            .unwrap();
        assert_eq!(e.vector, vec![2.0, 2.0]);
        assert_eq!(e.n_words_used, 3);
    }

    #[test]
    fn strict_mode_excludes_mention() {
        let vocab = vocab_with(&[("mm", [3.0, 0.0]), ("cc", [0.0, 4.0])]);
        let doc = tokenize("mm cc");
        let e = compute_context(&doc, (0, 0), 1, Scope::Short, &vocab, ContextMode::Strict)
            .unwrap();
        assert_eq!(e.vector, vec![0.0, 2.0]);
        let doc = tokenize("mm");
        assert!(
            compute_context(&doc, (0, 0), 1, Scope::Short, &vocab, ContextMode::Strict).is_none()
        );
    }

    #[test]
    fn punctuation_only_has_no_context() {
        let vocab = Vocabulary::new(2);
        let doc = tokenize("...");
        assert!(
            compute_context(&doc, (1, 1), 2, Scope::Long, &vocab, ContextMode::Inclusive).is_none()
        );
    }
}
