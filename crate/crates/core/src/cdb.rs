//! Concept database: concept names, lookup indexes and learned concept vectors.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{is_abbreviation, TextPipeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NameStatus {
    Preferred,
    Synonym,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptName {
    pub raw: String,
    pub normalized_tokens: Vec<String>,
    pub status: NameStatus,
    pub is_abbreviation: bool,
    /// No other concept shares this normalized name.
    pub is_unique: bool,
}

impl ConceptName {
    pub fn key(&self) -> String {
        name_key(&self.normalized_tokens)
    }
}

/// Lookup key of a normalized token sequence.
pub fn name_key<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut key = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            key.push(' ');
        }
        key.push_str(t.as_ref());
    }
    key
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub concept_id: String,
    pub names: Vec<ConceptName>,
    pub type_ids: BTreeSet<String>,
    pub vector_long: Option<Vec<f64>>,
    pub vector_short: Option<Vec<f64>>,
    pub train_count: u64,
}

impl ConceptRecord {
    pub fn is_trained(&self) -> bool {
        self.train_count > 0 && self.vector_long.is_some() && self.vector_short.is_some()
    }

    pub fn name(&self, key: &str) -> Option<&ConceptName> {
        self.names.iter().find(|n| n.key() == key)
    }
}

/// One row of a terminology dump.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ConceptRow {
    #[serde(rename = "cui")]
    pub concept_id: String,
    pub name: String,
    #[serde(default)]
    pub type_ids: String,
    #[serde(default)]
    pub name_status: String,
}

impl ConceptRow {
    pub fn new(concept_id: &str, name: &str) -> Self {
        Self {
            concept_id: concept_id.into(),
            name: name.into(),
            type_ids: String::new(),
            name_status: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug)]
pub struct BuildReport {
    pub cdb: ConceptDatabase,
    pub row_errors: Vec<RowError>,
}

#[derive(Debug, Clone, Default)]
pub struct ConceptDatabase {
    concepts: BTreeMap<String, ConceptRecord>,
    name_index: HashMap<String, BTreeSet<String>>,
    subname_index: HashSet<String>,
    max_name_tokens: usize,
}

impl PartialEq for ConceptDatabase {
    fn eq(&self, other: &Self) -> bool {
        self.concepts == other.concepts
    }
}

fn parse_status(raw: &str) -> std::result::Result<(NameStatus, bool), String> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "p" | "pn" | "preferred" => Ok((NameStatus::Preferred, false)),
        "" | "s" | "sy" | "synonym" => Ok((NameStatus::Synonym, false)),
        "a" | "ab" | "abbr" | "abbreviation" => Ok((NameStatus::Synonym, true)),
        other => Err(format!("unknown name_status '{other}'")),
    }
}

impl ConceptDatabase {
    /// Build from terminology rows. `rows` pairs each row with its source line.
    ///
    /// Malformed rows are reported and skipped; duplicate names of the same
    /// concept collapse into one entry.
    pub fn build<I>(rows: I, pipeline: &TextPipeline) -> Result<BuildReport>
    where
        I: IntoIterator<Item = (usize, std::result::Result<ConceptRow, String>)>,
    {
        let mut concepts: BTreeMap<String, ConceptRecord> = BTreeMap::new();
        let mut row_errors = Vec::new();
        for (line, row) in rows {
            let row = match row {
                Ok(r) => r,
                Err(message) => {
                    row_errors.push(RowError { line, message });
                    continue;
                }
            };
            let cid = row.concept_id.trim();
            let raw = row.name.trim();
            if cid.is_empty() || raw.is_empty() {
                row_errors.push(RowError {
                    line,
                    message: "empty concept id or name".into(),
                });
                continue;
            }
            let (status, flagged_abbr) = match parse_status(&row.name_status) {
                Ok(s) => s,
                Err(message) => {
                    row_errors.push(RowError { line, message });
                    continue;
                }
            };
            let tokens = pipeline.name_tokens(raw);
            if tokens.is_empty() {
                row_errors.push(RowError {
                    line,
                    message: format!("name '{raw}' has no word tokens"),
                });
                continue;
            }
            let record = concepts
                .entry(cid.to_string())
                .or_insert_with(|| ConceptRecord {
                    concept_id: cid.to_string(),
                    names: Vec::new(),
                    type_ids: BTreeSet::new(),
                    vector_long: None,
                    vector_short: None,
                    train_count: 0,
                });
            record.type_ids.extend(
                row.type_ids
                    .split('|')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(String::from),
            );
            let abbr = flagged_abbr || is_abbreviation(raw);
            match record
                .names
                .iter_mut()
                .find(|n| n.normalized_tokens == tokens)
            {
                Some(existing) => {
                    existing.is_abbreviation |= abbr;
                    existing.status = existing.status.min(status);
                }
                None => record.names.push(ConceptName {
                    raw: raw.to_string(),
                    normalized_tokens: tokens,
                    status,
                    is_abbreviation: abbr,
                    is_unique: false,
                }),
            }
        }
        if concepts.is_empty() {
            return Err(Error::NoValidRows {
                rejected: row_errors.len(),
            });
        }
        Ok(BuildReport {
            cdb: Self::from_concepts(concepts),
            row_errors,
        })
    }

    /// Build from a CSV dump with header `cui,name,type_ids,name_status`.
    pub fn from_csv<R: Read>(reader: R, pipeline: &TextPipeline) -> Result<BuildReport> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        for required in ["cui", "name"] {
            if !headers.iter().any(|h| h == required) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("missing '{required}' column"),
                });
            }
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            match record {
                Ok(rec) => {
                    let line = rec.position().map_or(0, |p| p.line() as usize);
                    let row = rec
                        .deserialize::<ConceptRow>(Some(&headers))
                        .map_err(|e| e.to_string());
                    rows.push((line, row));
                }
                Err(e) => {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    rows.push((line, Err(e.to_string())));
                }
            }
        }
        Self::build(rows, pipeline)
    }

    /// Recompute uniqueness flags and all derived indexes from `concepts`.
    pub fn from_concepts(mut concepts: BTreeMap<String, ConceptRecord>) -> Self {
        let mut name_index: HashMap<String, BTreeSet<String>> = HashMap::new();
        let mut subname_index = HashSet::new();
        let mut max_name_tokens = 0;
        for record in concepts.values() {
            for name in &record.names {
                name_index
                    .entry(name.key())
                    .or_default()
                    .insert(record.concept_id.clone());
                let n = name.normalized_tokens.len();
                max_name_tokens = max_name_tokens.max(n);
                for len in 1..n {
                    subname_index.insert(name_key(&name.normalized_tokens[..len]));
                }
            }
        }
        for record in concepts.values_mut() {
            for name in &mut record.names {
                name.is_unique = name_index.get(&name.key()).map_or(0, |s| s.len()) == 1;
            }
        }
        Self {
            concepts,
            name_index,
            subname_index,
            max_name_tokens,
        }
    }

    pub fn concepts(&self) -> &BTreeMap<String, ConceptRecord> {
        &self.concepts
    }

    pub fn into_concepts(self) -> BTreeMap<String, ConceptRecord> {
        self.concepts
    }

    pub fn get(&self, concept_id: &str) -> Option<&ConceptRecord> {
        self.concepts.get(concept_id)
    }

    /// Mutable access for learned state. Names must not be edited through
    /// this handle; rebuild with [`ConceptDatabase::from_concepts`] instead.
    pub fn get_mut(&mut self, concept_id: &str) -> Option<&mut ConceptRecord> {
        self.concepts.get_mut(concept_id)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    /// Concepts carrying a name with this key.
    pub fn lookup(&self, key: &str) -> Option<&BTreeSet<String>> {
        self.name_index.get(key)
    }

    pub fn is_name(&self, key: &str) -> bool {
        self.name_index.contains_key(key)
    }

    /// True when `key` is a strict token-prefix of some multi-token name.
    pub fn is_subname(&self, key: &str) -> bool {
        self.subname_index.contains(key)
    }

    pub fn name_index(&self) -> &HashMap<String, BTreeSet<String>> {
        &self.name_index
    }

    pub fn subname_index(&self) -> &HashSet<String> {
        &self.subname_index
    }

    pub fn max_name_tokens(&self) -> usize {
        self.max_name_tokens
    }

    /// Every distinct token occurring in some concept name.
    pub fn words(&self) -> BTreeSet<String> {
        self.concepts
            .values()
            .flat_map(|c| c.names.iter())
            .flat_map(|n| n.normalized_tokens.iter().cloned())
            .collect()
    }

    /// Forget all learned vectors and counters.
    pub fn reset_training(&mut self) {
        for c in self.concepts.values_mut() {
            c.vector_long = None;
            c.vector_short = None;
            c.train_count = 0;
        }
    }
}
