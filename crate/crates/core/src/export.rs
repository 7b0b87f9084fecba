//! Annotation project exports and line-delimited annotation records.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linker::EntityMention;

pub const EXPORT_SCHEMA_VERSION: u32 = 1;

/// JSON Schema describing [`AnnotationExport`].
pub const EXPORT_SCHEMA: &str = include_str!("../schema/annotation_export.schema.json");

fn schema_version() -> u32 {
    EXPORT_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationExport {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub projects: Vec<ExportProject>,
}

impl Default for AnnotationExport {
    fn default() -> Self {
        Self {
            schema_version: EXPORT_SCHEMA_VERSION,
            projects: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportProject {
    pub id: String,
    pub name: String,
    pub documents: Vec<ExportDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportDocument {
    pub doc_id: String,
    pub text: String,
    pub annotations: Vec<ExportAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportAnnotation {
    pub start: usize,
    pub end: usize,
    pub cui: String,
    pub correct: bool,
    #[serde(default)]
    pub killed: bool,
    #[serde(default)]
    pub manually_added: bool,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

impl AnnotationExport {
    pub fn from_json(s: &str) -> Result<Self> {
        let export: Self = serde_json::from_str(s)?;
        export.validate()?;
        Ok(export)
    }

    /// Structural checks beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != EXPORT_SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.schema_version,
                supported: EXPORT_SCHEMA_VERSION,
            });
        }
        for p in &self.projects {
            for d in &p.documents {
                let len = d.text.chars().count();
                for a in &d.annotations {
                    if a.start >= a.end || a.end > len || a.cui.is_empty() {
                        return Err(Error::InvalidConfig(format!(
                            "document '{}': invalid annotation {}..{} '{}'",
                            d.doc_id, a.start, a.end, a.cui
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One mention in an annotation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub start: usize,
    pub end: usize,
    pub cui: String,
    #[serde(default)]
    pub confidence: f64,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    /// Linked through a unique name of a never-trained concept. Written only
    /// when true.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub untrained: bool,
}

impl MentionRecord {
    /// `None` for unlinked mentions.
    pub fn from_mention(m: &EntityMention) -> Option<Self> {
        let linked = m.linked.as_ref()?;
        Some(Self {
            start: m.start,
            end: m.end,
            cui: linked.concept_id.clone(),
            confidence: linked.confidence,
            meta: m.meta.clone(),
            untrained: linked.untrained,
        })
    }
}

/// One annotated document, serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub text_hash: String,
    pub mentions: Vec<MentionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<bool>,
}

/// Hex SHA-256 of the document text.
pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn write_records<W: Write>(mut w: W, records: &[AnnotationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
