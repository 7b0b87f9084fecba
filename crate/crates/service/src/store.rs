//! Projects, documents, feedback and review progress in one SQLite file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use clinlink_core::meta::MetaTask;
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS projects (
    id TEXT PRIMARY KEY,
    settings TEXT NOT NULL,
    seq INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS documents (
    project_id TEXT NOT NULL,
    doc_id TEXT NOT NULL,
    text TEXT NOT NULL,
    seq INTEGER NOT NULL,
    PRIMARY KEY (project_id, doc_id)
);
CREATE TABLE IF NOT EXISTS feedback (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    project_id TEXT NOT NULL,
    doc_id TEXT NOT NULL,
    annotator TEXT NOT NULL,
    start INTEGER NOT NULL,
    end INTEGER NOT NULL,
    cui TEXT NOT NULL,
    correct INTEGER NOT NULL,
    manually_added INTEGER NOT NULL,
    meta TEXT NOT NULL,
    UNIQUE (project_id, doc_id, annotator, start, end)
);
CREATE TABLE IF NOT EXISTS reviewed (
    project_id TEXT NOT NULL,
    doc_id TEXT NOT NULL,
    annotator TEXT NOT NULL,
    PRIMARY KEY (project_id, doc_id, annotator)
);
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSettings {
    pub name: String,
    #[serde(default)]
    pub concept_filter: BTreeSet<String>,
    #[serde(default)]
    pub meta_tasks: Vec<MetaTask>,
    /// Annotators allowed on the project; anyone when empty.
    #[serde(default)]
    pub annotators: BTreeSet<String>,
    #[serde(default)]
    pub online_learning: bool,
    pub auto_accept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredDocument {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub doc_id: String,
    pub annotator: String,
    pub start: usize,
    pub end: usize,
    pub cui: String,
    pub correct: bool,
    pub manually_added: bool,
    pub meta: BTreeMap<String, String>,
}

pub enum Insert {
    Created,
    Replaced,
    Duplicate,
}

pub struct Store {
    conn: Connection,
}

impl Store {
    pub fn open(path: Option<&Path>) -> rusqlite::Result<Self> {
        let conn = match path {
            Some(p) => Connection::open(p)?,
            None => Connection::open_in_memory()?,
        };
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn })
    }

    /// Returns false when the id is taken.
    pub fn create_project(
        &mut self,
        id: &str,
        settings: &ProjectSettings,
        documents: &[StoredDocument],
    ) -> rusqlite::Result<bool> {
        let tx = self.conn.transaction()?;
        let exists: bool = tx
            .query_row("SELECT 1 FROM projects WHERE id = ?1", [id], |_| Ok(()))
            .optional()?
            .is_some();
        if exists {
            return Ok(false);
        }
        let seq: i64 = tx.query_row("SELECT COALESCE(MAX(seq), 0) + 1 FROM projects", [], |r| r.get(0))?;
        let json = serde_json::to_string(settings).expect("settings serialize");
        tx.execute(
            "INSERT INTO projects (id, settings, seq) VALUES (?1, ?2, ?3)",
            params![id, json, seq],
        )?;
        for (i, d) in documents.iter().enumerate() {
            tx.execute(
                "INSERT INTO documents (project_id, doc_id, text, seq) VALUES (?1, ?2, ?3, ?4)",
                params![id, d.doc_id, d.text, i as i64],
            )?;
        }
        tx.commit()?;
        Ok(true)
    }

    pub fn project(&self, id: &str) -> rusqlite::Result<Option<ProjectSettings>> {
        let json: Option<String> = self
            .conn
            .query_row("SELECT settings FROM projects WHERE id = ?1", [id], |r| r.get(0))
            .optional()?;
        Ok(json.map(|j| serde_json::from_str(&j).expect("stored settings parse")))
    }

    pub fn project_ids(&self) -> rusqlite::Result<Vec<String>> {
        let mut stmt = self.conn.prepare("SELECT id FROM projects ORDER BY seq")?;
        let ids = stmt.query_map([], |r| r.get(0))?.collect();
        ids
    }

    pub fn documents(&self, project: &str) -> rusqlite::Result<Vec<StoredDocument>> {
        let mut stmt = self
            .conn
            .prepare("SELECT doc_id, text FROM documents WHERE project_id = ?1 ORDER BY seq")?;
        let docs = stmt
            .query_map([project], |r| {
                Ok(StoredDocument {
                    doc_id: r.get(0)?,
                    text: r.get(1)?,
                })
            })?
            .collect();
        docs
    }

    pub fn document(&self, project: &str, doc_id: &str) -> rusqlite::Result<Option<StoredDocument>> {
        self.conn
            .query_row(
                "SELECT doc_id, text FROM documents WHERE project_id = ?1 AND doc_id = ?2",
                [project, doc_id],
                |r| {
                    Ok(StoredDocument {
                        doc_id: r.get(0)?,
                        text: r.get(1)?,
                    })
                },
            )
            .optional()
    }

    /// First document, in insertion order, the annotator has not completed.
    pub fn next_unreviewed(&self, project: &str, annotator: &str) -> rusqlite::Result<Option<StoredDocument>> {
        self.conn
            .query_row(
                "SELECT d.doc_id, d.text FROM documents d
                 WHERE d.project_id = ?1 AND NOT EXISTS (
                     SELECT 1 FROM reviewed r
                     WHERE r.project_id = d.project_id AND r.doc_id = d.doc_id AND r.annotator = ?2)
                 ORDER BY d.seq LIMIT 1",
                [project, annotator],
                |r| {
                    Ok(StoredDocument {
                        doc_id: r.get(0)?,
                        text: r.get(1)?,
                    })
                },
            )
            .optional()
    }

    pub fn mark_reviewed(&self, project: &str, doc_id: &str, annotator: &str) -> rusqlite::Result<()> {
        self.conn.execute(
            "INSERT OR IGNORE INTO reviewed (project_id, doc_id, annotator) VALUES (?1, ?2, ?3)",
            [project, doc_id, annotator],
        )?;
        Ok(())
    }

    pub fn insert_feedback(&self, project: &str, f: &Feedback, overwrite: bool) -> rusqlite::Result<Insert> {
        let existing: Option<i64> = self
            .conn
            .query_row(
                "SELECT id FROM feedback
                 WHERE project_id = ?1 AND doc_id = ?2 AND annotator = ?3 AND start = ?4 AND end = ?5",
                params![project, f.doc_id, f.annotator, f.start as i64, f.end as i64],
                |r| r.get(0),
            )
            .optional()?;
        let meta = serde_json::to_string(&f.meta).expect("meta serialize");
        match existing {
            Some(_) if !overwrite => Ok(Insert::Duplicate),
            Some(id) => {
                self.conn.execute(
                    "UPDATE feedback SET cui = ?1, correct = ?2, manually_added = ?3, meta = ?4 WHERE id = ?5",
                    params![f.cui, f.correct, f.manually_added, meta, id],
                )?;
                Ok(Insert::Replaced)
            }
            None => {
                self.conn.execute(
                    "INSERT INTO feedback (project_id, doc_id, annotator, start, end, cui, correct, manually_added, meta)
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
                    params![
                        project,
                        f.doc_id,
                        f.annotator,
                        f.start as i64,
                        f.end as i64,
                        f.cui,
                        f.correct,
                        f.manually_added,
                        meta
                    ],
                )?;
                Ok(Insert::Created)
            }
        }
    }

    /// Feedback of a project ordered by document, then span, then annotator.
    pub fn feedback(&self, project: &str) -> rusqlite::Result<Vec<Feedback>> {
        let mut stmt = self.conn.prepare(
            "SELECT f.doc_id, f.annotator, f.start, f.end, f.cui, f.correct, f.manually_added, f.meta
             FROM feedback f JOIN documents d ON d.project_id = f.project_id AND d.doc_id = f.doc_id
             WHERE f.project_id = ?1
             ORDER BY d.seq, f.start, f.end, f.annotator",
        )?;
        let rows = stmt
            .query_map([project], |r| {
                let meta: String = r.get(7)?;
                Ok(Feedback {
                    doc_id: r.get(0)?,
                    annotator: r.get(1)?,
                    start: r.get::<_, i64>(2)? as usize,
                    end: r.get::<_, i64>(3)? as usize,
                    cui: r.get(4)?,
                    correct: r.get(5)?,
                    manually_added: r.get(6)?,
                    meta: serde_json::from_str(&meta).unwrap_or_default(),
                })
            })?
            .collect();
        rows
    }

    pub fn feedback_count(&self) -> rusqlite::Result<u64> {
        self.conn
            .query_row("SELECT COUNT(*) FROM feedback", [], |r| r.get::<_, i64>(0))
            .map(|n| n as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> ProjectSettings {
        ProjectSettings {
            name: "p".into(),
            concept_filter: BTreeSet::new(),
            meta_tasks: Vec::new(),
            annotators: BTreeSet::new(),
            online_learning: false,
            auto_accept: 0.9,
        }
    }

    fn docs() -> Vec<StoredDocument> {
        ["a", "b"]
            .iter()
            .map(|d| StoredDocument {
                doc_id: d.to_string(),
                text: format!("text {d}"),
            })
            .collect()
    }

    #[test]
    fn project_lifecycle() {
        let mut s = Store::open(None).unwrap();
        assert!(s.create_project("p1", &settings(), &docs()).unwrap());
        assert!(!s.create_project("p1", &settings(), &docs()).unwrap());
        assert_eq!(s.project("p1").unwrap(), Some(settings()));
        assert_eq!(s.next_unreviewed("p1", "x").unwrap().unwrap().doc_id, "a");
        s.mark_reviewed("p1", "a", "x").unwrap();
        assert_eq!(s.next_unreviewed("p1", "x").unwrap().unwrap().doc_id, "b");
        assert_eq!(s.next_unreviewed("p1", "y").unwrap().unwrap().doc_id, "a");
        s.mark_reviewed("p1", "b", "x").unwrap();
        assert!(s.next_unreviewed("p1", "x").unwrap().is_none());
    }

    #[test]
    fn duplicate_feedback_needs_overwrite() {
        let mut s = Store::open(None).unwrap();
        s.create_project("p", &settings(), &docs()).unwrap();
        let mut f = Feedback {
            doc_id: "a".into(),
            annotator: "x".into(),
            start: 0,
            end: 4,
            cui: "C1".into(),
            correct: true,
            manually_added: false,
            meta: BTreeMap::new(),
        };
        assert!(matches!(s.insert_feedback("p", &f, false).unwrap(), Insert::Created));
        assert!(matches!(s.insert_feedback("p", &f, false).unwrap(), Insert::Duplicate));
        f.correct = false;
        assert!(matches!(s.insert_feedback("p", &f, true).unwrap(), Insert::Replaced));
        f.annotator = "y".into();
        assert!(matches!(s.insert_feedback("p", &f, false).unwrap(), Insert::Created));
        let all = s.feedback("p").unwrap();
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|f| !f.correct));
    }
}
