use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::ServiceError;

pub const DEFAULT_MAX_BODY: usize = 1 << 20;
pub const DEFAULT_AUTO_ACCEPT: f64 = 0.9;

/// Service settings, read from TOML.
///
/// ```toml
/// max_body_bytes = 1048576
/// database = "projects.sqlite"
/// snapshot_dir = "snapshots"
/// auto_accept = 0.9
/// seed = 0
///
/// [annotators]
/// alice = "secret-token-a"
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_max_body")]
    pub max_body_bytes: usize,
    /// SQLite file for projects and feedback; in memory when absent.
    #[serde(default)]
    pub database: Option<PathBuf>,
    /// Directory receiving a model file per snapshot.
    #[serde(default)]
    pub snapshot_dir: Option<PathBuf>,
    /// Default auto-accept confidence for new projects.
    #[serde(default = "default_auto_accept")]
    pub auto_accept: f64,
    /// Seed of the online-learning negative sampler.
    #[serde(default)]
    pub seed: u64,
    /// Annotator name → bearer token. Authentication is off when empty.
    #[serde(default)]
    pub annotators: BTreeMap<String, String>,
}

fn default_max_body() -> usize {
    DEFAULT_MAX_BODY
}

fn default_auto_accept() -> f64 {
    DEFAULT_AUTO_ACCEPT
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_body_bytes: DEFAULT_MAX_BODY,
            database: None,
            snapshot_dir: None,
            auto_accept: DEFAULT_AUTO_ACCEPT,
            seed: 0,
            annotators: BTreeMap::new(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(s: &str) -> Result<Self, ServiceError> {
        let cfg: Self = toml::from_str(s).map_err(|e| ServiceError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&cfg.auto_accept) {
            return Err(ServiceError::Config("auto_accept outside [0, 1]".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn annotator_for_token(&self, token: &str) -> Option<&str> {
        self.annotators
            .iter()
            .find(|(_, t)| t.as_str() == token)
            .map(|(name, _)| name.as_str())
    }
}
