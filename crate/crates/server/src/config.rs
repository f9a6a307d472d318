//! Server configuration: a TOML file overridden by `MVFORGE_*` variables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "MVFORGE_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid value {value:?} for {key}")]
    Env { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub single_model: PathBuf,
    pub mv_model: PathBuf,
    /// Session logs go to `<data_dir>/logs`, trained bundles to
    /// `<data_dir>/models`.
    pub data_dir: PathBuf,
    /// Seeds session ids.
    pub seed: u64,
    pub max_upload_bytes: usize,
    /// Candidate cap for tables wider than 10 columns.
    pub wide_table_cap: usize,
    /// When set, every endpoint except health needs `Authorization: Bearer <token>`.
    pub api_token: Option<String>,
    /// Event timestamps from a counter instead of the wall clock, for
    /// byte-identical replays.
    pub logical_clock: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            single_model: "models/single.json".into(),
            mv_model: "models/mv.json".into(),
            data_dir: "data".into(),
            seed: 0,
            max_upload_bytes: 20 * 1024 * 1024,
            wide_table_cap: 500,
            api_token: None,
            logical_clock: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Env {
        key: key.into(),
        value: value.into(),
    })
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads the file (defaults when `None`), then applies the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text)?
            }
            None => ServerConfig::default(),
        };
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    /// Applies `MVFORGE_<FIELD>` overrides; other variables are ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (key, value) in vars {
            let Some(field) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            match field {
                "BIND" => self.bind = value,
                "SINGLE_MODEL" => self.single_model = value.into(),
                "MV_MODEL" => self.mv_model = value.into(),
                "DATA_DIR" => self.data_dir = value.into(),
                "SEED" => self.seed = parse(&key, &value)?,
                "MAX_UPLOAD_BYTES" => self.max_upload_bytes = parse(&key, &value)?,
                "WIDE_TABLE_CAP" => self.wide_table_cap = parse(&key, &value)?,
                "API_TOKEN" => self.api_token = Some(value).filter(|v| !v.is_empty()),
                "LOGICAL_CLOCK" => self.logical_clock = parse(&key, &value)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.data_dir.join("logs")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.data_dir.join("models")
    }
}
