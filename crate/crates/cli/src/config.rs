//! `--config` files: a flat JSON object keyed by long flag names.

use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

/// Bad or missing arguments; reported with exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
            Value::Object(values) => Ok(ConfigFile { values }),
            _ => Err(UsageError(format!("{} must hold a JSON object", path.display())).into()),
        }
    }

    /// The flag value if given, else the config entry under `key`
    /// (`train-limit` also matches `train_limit`).
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> anyhow::Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        let entry = self.values.get(key).or_else(|| self.values.get(&key.replace('-', "_")));
        match entry {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| UsageError(format!("config key `{key}`: {e}")).into()),
        }
    }

    pub fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> anyhow::Result<T> {
        self.pick(flag, key)?
            .ok_or_else(|| UsageError(format!("missing required --{key}")).into())
    }
}
