//! Tokenization and normalization.
//!
//! Tokens carry character offsets into the original document. Alphanumeric
//! runs are kept intact (an apostrophe between two alphanumerics stays inside
//! the run), every other non-whitespace character becomes its own
//! punctuation token. Punctuation tokens have an empty `norm` and never take
//! part in matching or context windows.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spell::SpellChecker;
use crate::vocab::Vocabulary;

/// Built-in English stopword list.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she",
    "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
    "yourselves",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Lowercased, spell-corrected and lemmatized form. Empty for punctuation.
    pub norm: String,
    /// Character offset of the first character.
    pub start: usize,
    /// Character offset one past the last character.
    pub end: usize,
    pub byte_start: usize,
    pub byte_end: usize,
    pub is_stopword: bool,
    pub was_corrected: bool,
}

impl Token {
    pub fn is_punct(&self) -> bool {
        self.norm.is_empty()
    }

    /// True when the token takes part in matching and context windows.
    pub fn is_word(&self) -> bool {
        !self.norm.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDocument {
    pub doc_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
}

impl TokenizedDocument {
    /// Number of characters in the source text.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Tokenize with the built-in stopword list and no lemma table.
pub fn tokenize(text: &str) -> TokenizedDocument {
    TextPipeline::default().tokenize("", text)
}

/// Lowercase `surface` and apply the lemma table when it has an entry.
pub fn normalize(surface: &str, lemmas: &BTreeMap<String, String>) -> String {
    let lower = surface.to_lowercase();
    match lemmas.get(&lower) {
        Some(lemma) => lemma.clone(),
        None => lower,
    }
}

/// Abbreviation heuristic applied to raw (original casing) surface forms:
/// at least one letter, no lowercase letters, at most five characters.
pub fn is_abbreviation(raw: &str) -> bool {
    let mut letters = 0;
    let mut len = 0;
    for c in raw.chars() {
        len += 1;
        if c.is_alphabetic() {
            if c.is_lowercase() {
                return false;
            }
            letters += 1;
        }
    }
    letters > 0 && len <= 5
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

struct Span {
    byte_start: usize,
    byte_end: usize,
    start: usize,
    end: usize,
    word: bool,
}

fn split(text: &str) -> Vec<Span> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map(|&(b, _)| b).unwrap_or(text.len());
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_alphanumeric() {
            let start = i;
            i += 1;
            while i < chars.len() {
                let c = chars[i].1;
                if c.is_alphanumeric() {
                    i += 1;
                } else if is_apostrophe(c)
                    && i + 1 < chars.len()
                    && chars[i + 1].1.is_alphanumeric()
                {
                    i += 2;
                } else {
                    break;
                }
            }
            spans.push(Span {
                byte_start: byte_at(start),
                byte_end: byte_at(i),
                start,
                end: i,
                word: true,
            });
        } else {
            spans.push(Span {
                byte_start: byte_at(i),
                byte_end: byte_at(i + 1),
                start: i,
                end: i + 1,
                word: false,
            });
            i += 1;
        }
    }
    spans
}

/// Borrowed resources needed for spell correction during processing.
#[derive(Clone, Copy)]
pub struct SpellContext<'a> {
    pub vocab: &'a Vocabulary,
    pub checker: &'a SpellChecker,
}

/// Stopwords and lemma table used to turn raw text into normalized tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPipeline {
    pub stopwords: BTreeSet<String>,
    pub lemmas: BTreeMap<String, String>,
}

impl Default for TextPipeline {
    fn default() -> Self {
        Self {
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            lemmas: BTreeMap::new(),
        }
    }
}

impl TextPipeline {
    pub fn is_stopword(&self, norm: &str) -> bool {
        self.stopwords.contains(norm)
    }

    /// Lemma table file: one `surface<TAB>lemma` pair per line.
    pub fn load_lemmas(path: &Path) -> Result<BTreeMap<String, String>> {
        let content = fs::read_to_string(path)?;
        let mut lemmas = BTreeMap::new();
        for (i, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (surface, lemma) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected 'surface<TAB>lemma'".into(),
            })?;
            let (surface, lemma) = (surface.trim(), lemma.trim());
            if surface.is_empty() || lemma.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty surface or lemma".into(),
                });
            }
            lemmas.insert(surface.to_lowercase(), lemma.to_lowercase());
        }
        Ok(lemmas)
    }

    /// Stopword file: one word per line.
    pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
        let content = fs::read_to_string(path)?;
        Ok(content
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect())
    }

    /// Split `text` into tokens with lowercased norms (no lemma, no spelling).
    pub fn tokenize(&self, doc_id: &str, text: &str) -> TokenizedDocument {
        let tokens = split(text)
            .into_iter()
            .map(|span| {
                let surface = &text[span.byte_start..span.byte_end];
                let norm = if span.word {
                    surface.to_lowercase()
                } else {
                    String::new()
                };
                Token {
                    text: surface.to_string(),
                    is_stopword: span.word && self.stopwords.contains(&norm),
                    norm,
                    start: span.start,
                    end: span.end,
                    byte_start: span.byte_start,
                    byte_end: span.byte_end,
                    was_corrected: false,
                }
            })
            .collect();
        TokenizedDocument {
            doc_id: doc_id.to_string(),
            text: text.to_string(),
            tokens,
        }
    }

    /// Full normalization: tokenize, optionally spell-correct, lemmatize.
    ///
    /// Stopwords and tokens containing non-letters are never spell-corrected.
    pub fn process(
        &self,
        doc_id: &str,
        text: &str,
        spell: Option<SpellContext<'_>>,
    ) -> TokenizedDocument {
        let mut doc = self.tokenize(doc_id, text);
        for token in doc.tokens.iter_mut().filter(|t| t.is_word()) {
            if let Some(ctx) = spell {
                if !token.is_stopword && token.text.chars().all(char::is_alphabetic) {
                    if let Some(fixed) = ctx.checker.correct(&token.text, ctx.vocab) {
                        token.norm = fixed;
                        token.was_corrected = true;
                    }
                }
            }
            if let Some(lemma) = self.lemmas.get(&token.norm) {
                token.norm = lemma.clone();
            }
        }
        doc
    }

    /// Lowercased word norms of `text`, for vocabulary counting.
    pub fn word_norms(&self, text: &str) -> Vec<String> {
        split(text)
            .into_iter()
            .filter(|s| s.word)
            .map(|s| text[s.byte_start..s.byte_end].to_lowercase())
            .collect()
    }

    /// Normalized word tokens of a dictionary name (no spelling correction).
    pub fn name_tokens(&self, name: &str) -> Vec<String> {
        split(name)
            .into_iter()
            .filter(|s| s.word)
            .map(|s| normalize(&name[s.byte_start..s.byte_end], &self.lemmas))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(doc: &TokenizedDocument) -> Vec<&str> {
        doc.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn offsets_for_simple_sentence() {
        let doc = tokenize("Heart failure.");
        assert_eq!(texts(&doc), ["Heart", "failure", "."]);
        let offsets: Vec<_> = doc.tokens.iter().map(|t| (t.start, t.end)).collect();
        assert_eq!(offsets, [(0, 5), (6, 13), (13, 14)]);
        assert!(doc.tokens[2].is_punct());
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(tokenize("").tokens.is_empty());
        assert!(tokenize("   \n\t").tokens.is_empty());
    }

    #[test]
    fn abbreviation_token_keeps_case_in_text() {
        let doc = tokenize("pt.'s HR 120");
        assert_eq!(texts(&doc), ["pt", ".", "'", "s", "HR", "120"]);
        let hr = doc.tokens.iter().find(|t| t.text == "HR").unwrap();
        assert_eq!(hr.norm, "hr");
        assert!(is_abbreviation(&hr.text));
    }

    #[test]
    fn internal_apostrophe_stays_in_token() {
        let doc = tokenize("patient's Crohn’s disease");
        assert_eq!(texts(&doc), ["patient's", "Crohn’s", "disease"]);
        let doc = tokenize("dogs' bowls");
        assert_eq!(texts(&doc), ["dogs", "'", "bowls"]);
    }

    #[test]
    fn char_offsets_not_bytes() {
        let doc = tokenize("café fever");
        assert_eq!((doc.tokens[1].start, doc.tokens[1].end), (5, 10));
        assert_eq!(doc.tokens[1].byte_start, 6);
    }

    #[test]
    fn stopwords_flagged() {
        let doc = tokenize("failure of kidneys");
        let flags: Vec<_> = doc.tokens.iter().map(|t| t.is_stopword).collect();
        assert_eq!(flags, [false, true, false]);
    }

    #[test]
    fn normalize_lowercases_and_lemmatizes() {
        let mut table = BTreeMap::new();
        table.insert("kidneys".to_string(), "kidney".to_string());
        assert_eq!(normalize("kidneys", &table), "kidney");
        assert_eq!(normalize("Kidney", &BTreeMap::new()), "kidney");
        assert_eq!(normalize("HR", &BTreeMap::new()), "hr");
        assert!(is_abbreviation("HR"));
        assert!(!is_abbreviation("Hr"));
        assert!(!is_abbreviation("COPDXX"));
        assert!(!is_abbreviation("120"));
    }

    #[test]
    fn lemma_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lemmas.tsv");
        fs::write(&path, "kidneys\tkidney\nFevers\tfever\n\n").unwrap();
        let table = TextPipeline::load_lemmas(&path).unwrap();
        assert_eq!(table.get("fevers").map(String::as_str), Some("fever"));
        fs::write(&path, "no-tab-here\n").unwrap();
        assert!(matches!(
            TextPipeline::load_lemmas(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn name_tokens_skip_punctuation() {
        let p = TextPipeline::default();
        assert_eq!(p.name_tokens("Non-small cell"), ["non", "small", "cell"]);
    }
}
