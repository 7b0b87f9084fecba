//! Dictionary-based clinical concept recognition and linking with
//! context-vector disambiguation, online learning and meta-annotation.

pub mod cdb;
pub mod curve;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod eval;
pub mod export;
pub mod linker;
pub mod meta;
pub mod model;
pub mod spell;
pub mod synth;
pub mod text;
pub mod trainer;
pub mod vocab;

pub use cdb::{ConceptDatabase, ConceptName, ConceptRecord, ConceptRow, NameStatus};
pub use embedding::{ContextMode, Scope};
pub use engine::{Engine, EngineConfig};
pub use error::{Error, Result};
pub use eval::{score, Counts, GoldCorpus, Groups, MetricReport};
pub use export::{AnnotationExport, AnnotationRecord, ExportAnnotation, MentionRecord};
pub use linker::{EntityMention, LinkedConcept, LinkerConfig};
pub use meta::{MetaHyper, MetaModel, MetaTask};
pub use text::{TextPipeline, Token, TokenizedDocument};
pub use trainer::{TrainOptions, TrainStats};
pub use vocab::Vocabulary;
