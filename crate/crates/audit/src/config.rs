//! Service configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vtg_core::dataset::load_dataset;
use vtg_core::{Dataset, DatasetError, Schema};

use crate::model::DEFAULT_QC_THRESHOLD;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config '{path}': {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("dataset '{name}': {source}")]
    Dataset {
        name: String,
        #[source]
        source: DatasetError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Creates batches, runs QC and exports.
    Admin,
    Annotator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerConfig {
    pub id: String,
    pub token: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    #[serde(default = "default_schema")]
    pub schema: String,
}

fn default_schema() -> String {
    "native".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_threshold")]
    pub qc_threshold: f64,
    /// Append-only event log; omitted means state lives in memory only.
    #[serde(default)]
    pub event_log: Option<PathBuf>,
    /// `{video_id}` is substituted; used by `GET /videos/{id}`.
    #[serde(default)]
    pub video_url_template: Option<String>,
    #[serde(default)]
    pub workers: Vec<WorkerConfig>,
    #[serde(default)]
    pub datasets: Vec<DatasetConfig>,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_threshold() -> f64 {
    DEFAULT_QC_THRESHOLD
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: default_bind(),
            qc_threshold: DEFAULT_QC_THRESHOLD,
            event_log: None,
            video_url_template: None,
            workers: Vec::new(),
            datasets: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        if let Some(log) = &mut cfg.event_log {
            if log.is_relative() {
                *log = base.join(&*log);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.qc_threshold) {
            return Err(ConfigError::Invalid(format!(
                "qc_threshold {} is outside [0, 1]",
                self.qc_threshold
            )));
        }
        let mut ids = std::collections::HashSet::new();
        let mut tokens = std::collections::HashSet::new();
        for w in &self.workers {
            if w.id.trim().is_empty() || w.token.is_empty() {
                return Err(ConfigError::Invalid("workers need a non-empty id and token".into()));
            }
            if !ids.insert(&w.id) {
                return Err(ConfigError::Invalid(format!("worker '{}' is listed twice", w.id)));
            }
            if !tokens.insert(&w.token) {
                return Err(ConfigError::Invalid(format!("worker '{}' reuses another token", w.id)));
            }
        }
        let mut names = std::collections::HashSet::new();
        for d in &self.datasets {
            if !names.insert(&d.name) {
                return Err(ConfigError::Invalid(format!("dataset '{}' is listed twice", d.name)));
            }
            d.schema.parse::<Schema>().map_err(|source| ConfigError::Dataset {
                name: d.name.clone(),
                source,
            })?;
        }
        Ok(())
    }

    /// Loads every configured dataset under its configured name.
    pub fn load_datasets(&self) -> Result<Vec<Dataset>, ConfigError> {
        self.datasets
            .iter()
            .map(|d| {
                let wrap = |source| ConfigError::Dataset {
                    name: d.name.clone(),
                    source,
                };
                let schema: Schema = d.schema.parse().map_err(wrap)?;
                let (_, videos, annotations) = load_dataset(&d.path, schema).map_err(wrap)?.dataset.into_parts();
                Dataset::new(d.name.clone(), videos, annotations).map_err(wrap)
            })
            .collect()
    }

    pub fn worker_ids(&self) -> Vec<String> {
        self.workers.iter().map(|w| w.id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_full() {
        let cfg = ServiceConfig::from_toml_str(
            r#"
bind = "0.0.0.0:9000"
qc_threshold = 0.05
event_log = "events.jsonl"
video_url_template = "https://cdn.example/{video_id}.mp4"

[[workers]]
id = "alice"
token = "t-a"
role = "admin"

[[workers]]
id = "bob"
token = "t-b"
role = "annotator"

[[datasets]]
name = "charades"
path = "charades.jsonl"
schema = "charades"
"#,
        )
        .unwrap();
        assert_eq!(cfg.workers.len(), 2);
        assert_eq!(cfg.workers[0].role, Role::Admin);
        assert_eq!(cfg.qc_threshold, 0.05);
        assert_eq!(cfg.datasets[0].schema, "charades");
    }

    #[test]
    fn defaults() {
        let cfg = ServiceConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ServiceConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ServiceConfig::from_toml_str("qc_threshold = 1.5").is_err());
        assert!(ServiceConfig::from_toml_str("colour = 1").is_err());
        let dup = r#"
[[workers]]
id = "a"
token = "x"
role = "admin"
[[workers]]
id = "b"
token = "x"
role = "annotator"
"#;
        assert!(ServiceConfig::from_toml_str(dup).is_err());
        let bad_schema = "[[datasets]]\nname = \"d\"\npath = \"d.jsonl\"\nschema = \"csv\"\n";
        assert!(ServiceConfig::from_toml_str(bad_schema).is_err());
    }
}
