//! Run configuration shared by the CLI commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::aspect::TermCount;
use crate::extraction::ExtractionConfig;
use crate::model::ModelConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Review JSONL used for training.
    pub reviews: Option<PathBuf>,
    /// Fraction of entities held out as the development set.
    pub dev_fraction: f64,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/model.qtckpt`.
    pub checkpoint: Option<PathBuf>,
    pub aspect_config: Option<PathBuf>,
    pub term_count: TermCount,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            reviews: None,
            dev_fraction: 0.1,
            output_dir: PathBuf::from("qt-run"),
            checkpoint: None,
            aspect_config: None,
            term_count: TermCount::Tokens,
        }
    }
}

impl DataConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.qtckpt"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub extraction: ExtractionConfig,
    pub data: DataConfig,
    pub seed: u64,
    /// Run all parallel sections on one thread.
    pub deterministic_mode: bool,
}

impl RunConfig {
    /// Parses a JSON config and applies `section.key=value` overrides, where
    /// `value` is JSON (bare strings are accepted).
    pub fn from_json_with_overrides(json: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value: Value = serde_json::from_str(json).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let json = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?,
            None => "{}".to_string(),
        };
        Self::from_json_with_overrides(&json, overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut m = self.model.clone();
        // the tokenizer fixes vocab_size later; only the rest matters here
        m.vocab_size = m.vocab_size.max(crate::corpus::NUM_SPECIALS + 1);
        m.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.extraction
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.data.dev_fraction > 0.0 && self.data.dev_fraction < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "data.dev_fraction must be in (0, 1), got {}",
                self.data.dev_fraction
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn apply_override(root: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Invalid(format!("override {spec:?} is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("override {path:?}: {key:?} is not inside an object")))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(ConfigError::Invalid(format!("empty override key in {spec:?}")))
}
