//! The assembled annotation engine: text pipeline, dictionary matching,
//! linking and meta-annotation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdb::ConceptDatabase;
use crate::export::{text_hash, AnnotationRecord, MentionRecord};
use crate::linker::{detect_candidates, link, prune_overlaps, EntityMention, LinkerConfig, ReorderIndex};
use crate::meta::MetaModel;
use crate::spell::SpellChecker;
use crate::text::{SpellContext, TextPipeline, TokenizedDocument};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub linker: LinkerConfig,
    pub spell_check: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            linker: LinkerConfig::default(),
            spell_check: true,
        }
    }
}

/// Everything needed to annotate text. Safe to share between threads for
/// annotation; training requires exclusive access.
#[derive(Debug, Clone)]
pub struct Engine {
    pub vocab: Vocabulary,
    /// Learned state may be mutated freely; call [`Engine::reindex`] after
    /// replacing it or changing names.
    pub cdb: ConceptDatabase,
    pub pipeline: TextPipeline,
    pub config: EngineConfig,
    pub meta: Vec<MetaModel>,
    spell: SpellChecker,
    reorder: ReorderIndex,
}

impl Engine {
    pub fn new(
        vocab: Vocabulary,
        cdb: ConceptDatabase,
        pipeline: TextPipeline,
        config: EngineConfig,
    ) -> Self {
        let spell = SpellChecker::new(cdb.words());
        let reorder = ReorderIndex::new(&cdb, &pipeline);
        Self {
            vocab,
            cdb,
            pipeline,
            config,
            meta: Vec::new(),
            spell,
            reorder,
        }
    }

    pub fn reindex(&mut self) {
        self.spell = SpellChecker::new(self.cdb.words());
        self.reorder = ReorderIndex::new(&self.cdb, &self.pipeline);
    }

    pub fn spell_checker(&self) -> &SpellChecker {
        &self.spell
    }

    pub fn process(&self, doc_id: &str, text: &str) -> TokenizedDocument {
        let spell = self.config.spell_check.then_some(SpellContext {
            vocab: &self.vocab,
            checker: &self.spell,
        });
        self.pipeline.process(doc_id, text, spell)
    }

    /// Unlinked candidates of a processed document.
    pub fn detect(&self, doc: &TokenizedDocument) -> Vec<EntityMention> {
        detect_candidates(doc, &self.cdb, Some(&self.reorder), &self.config.linker)
    }

    /// Detect, link and resolve overlaps. Meta labels are not filled.
    pub fn link_document(&self, doc: &TokenizedDocument) -> Vec<EntityMention> {
        let linked = self
            .detect(doc)
            .into_iter()
            .filter_map(|m| link(m, doc, &self.cdb, &self.vocab, &self.config.linker))
            .collect();
        prune_overlaps(linked)
    }

    /// Full annotation of one document, including meta labels.
    pub fn annotate_document(&self, doc_id: &str, text: &str) -> (TokenizedDocument, Vec<EntityMention>) {
        let doc = self.process(doc_id, text);
        let mut mentions = self.link_document(&doc);
        for m in &mut mentions {
            for model in &self.meta {
                let pred = model.predict(&doc, m.token_span, &self.vocab);
                m.meta.insert(model.task.name.clone(), pred.label);
            }
        }
        (doc, mentions)
    }

    pub fn annotate(&self, text: &str) -> Vec<EntityMention> {
        self.annotate_document("", text).1
    }

    pub fn annotate_mentions(&self, text: &str) -> Vec<MentionRecord> {
        self.annotate(text)
            .iter()
            .filter_map(MentionRecord::from_mention)
            .collect()
    }

    pub fn annotate_record(&self, doc_id: &str, text: &str) -> AnnotationRecord {
        AnnotationRecord {
            doc_id: doc_id.to_string(),
            text_hash: text_hash(text),
            mentions: self.annotate_mentions(text),
            text: None,
            gold: None,
        }
    }

    /// Annotate `(doc_id, text)` pairs, in parallel when `threads > 1`.
    /// Output order matches input order.
    pub fn annotate_batch(&self, docs: &[(String, String)], threads: usize) -> Vec<AnnotationRecord> {
        if threads <= 1 {
            return docs.iter().map(|(id, t)| self.annotate_record(id, t)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build();
        match pool {
            Ok(pool) => pool.install(|| {
                docs.par_iter()
                    .map(|(id, t)| self.annotate_record(id, t))
                    .collect()
            }),
            Err(_) => docs.iter().map(|(id, t)| self.annotate_record(id, t)).collect(),
        }
    }
}
