//! Versioned single-file storage for vocabularies and engine models.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` payload length, bincode
//! payload, SHA-256 of the payload. All integers little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cdb::{ConceptDatabase, ConceptRecord};
use crate::engine::{Engine, EngineConfig};
use crate::error::{Error, Result};
use crate::text::TextPipeline;
use crate::vocab::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 8] = b"CLNKMODL";
const VOCAB_MAGIC: &[u8; 8] = b"CLNKVOCB";
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Serialize, Deserialize)]
struct ModelPayload {
    config: EngineConfig,
    pipeline: TextPipeline,
    vocab: Vocabulary,
    concepts: BTreeMap<String, ConceptRecord>,
}

fn encode<T: Serialize>(magic: &[u8; 8], value: &T) -> Result<Vec<u8>> {
    let payload = bincode::serialize(value).map_err(|e| Error::Corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 32);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    Ok(out)
}

fn decode<T: DeserializeOwned>(magic: &[u8; 8], bytes: &[u8]) -> Result<T> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt("file shorter than header".into()));
    }
    if &bytes[..8] != magic {
        return Err(Error::Corrupt("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != len.saturating_add(32) {
        return Err(Error::Corrupt(format!(
            "payload length {} does not match header {}",
            body.len().saturating_sub(32),
            len
        )));
    }
    let (payload, digest) = body.split_at(len);
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    bincode::deserialize(payload).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn vocab_to_bytes(vocab: &Vocabulary) -> Result<Vec<u8>> {
    encode(VOCAB_MAGIC, vocab)
}

pub fn vocab_from_bytes(bytes: &[u8]) -> Result<Vocabulary> {
    decode(VOCAB_MAGIC, bytes)
}

pub fn save_vocab(vocab: &Vocabulary, path: &Path) -> Result<()> {
    fs::write(path, vocab_to_bytes(vocab)?)?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    vocab_from_bytes(&fs::read(path)?)
}

/// Serialize vocabulary, concept database, text pipeline and configuration.
/// Meta models are stored separately.
pub fn model_to_bytes(engine: &Engine) -> Result<Vec<u8>> {
    #[derive(Serialize)]
    struct Borrowed<'a> {
        config: &'a EngineConfig,
        pipeline: &'a TextPipeline,
        vocab: &'a Vocabulary,
        concepts: &'a BTreeMap<String, ConceptRecord>,
    }
    encode(
        MODEL_MAGIC,
        &Borrowed {
            config: &engine.config,
            pipeline: &engine.pipeline,
            vocab: &engine.vocab,
            concepts: engine.cdb.concepts(),
        },
    )
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Engine> {
    let p: ModelPayload = decode(MODEL_MAGIC, bytes)?;
    Ok(Engine::new(
        p.vocab,
        ConceptDatabase::from_concepts(p.concepts),
        p.pipeline,
        p.config,
    ))
}

pub fn save_model(engine: &Engine, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(engine)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Engine> {
    model_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdb::ConceptRow;

    fn engine() -> Engine {
        let pipeline = TextPipeline::default();
        let rows = [("C1", "heart rate"), ("C1", "HR"), ("C2", "HR")]
            .iter()
            .enumerate()
            .map(|(i, (c, n))| (i, Ok(ConceptRow::new(c, n))));
        let mut cdb = ConceptDatabase::build(rows, &pipeline).unwrap().cdb;
        let c = cdb.get_mut("C1").unwrap();
        c.vector_long = Some(vec![0.1, -0.25, 1e-300]);
        c.vector_short = Some(vec![f64::MIN_POSITIVE, 2.0, 3.0]);
        c.train_count = 7;
        let mut vocab = Vocabulary::build(["heart", "rate", "rate"], 1, 3).unwrap();
        vocab.fill_fallback_vectors();
        Engine::new(vocab, cdb, pipeline, EngineConfig::default())
    }

    #[test]
    fn round_trip_preserves_everything() {
        let e = engine();
        let bytes = model_to_bytes(&e).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back.cdb, e.cdb);
        assert_eq!(back.vocab, e.vocab);
        assert_eq!(back.pipeline, e.pipeline);
        assert_eq!(back.config, e.config);
        assert_eq!(model_to_bytes(&back).unwrap(), bytes);
        assert!(!back.cdb.lookup("hr").unwrap().is_empty());
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = model_to_bytes(&engine()).unwrap();
        for cut in [0, 5, HEADER_LEN, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                model_from_bytes(&bytes[..cut]),
                Err(Error::Corrupt(_))
            ));
        }
    }

    #[test]
    fn flipped_byte_rejected() {
        let mut bytes = model_to_bytes(&engine()).unwrap();
        let mid = HEADER_LEN + 10;
        bytes[mid] ^= 0xff;
        assert!(matches!(model_from_bytes(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn future_version_rejected() {
        let mut bytes = model_to_bytes(&engine()).unwrap();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(Error::UnsupportedVersion { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn vocab_round_trip_and_kind_check() {
        let e = engine();
        let bytes = vocab_to_bytes(&e.vocab).unwrap();
        assert_eq!(vocab_from_bytes(&bytes).unwrap(), e.vocab);
        assert!(model_from_bytes(&bytes).is_err());
    }
}
