//! Run configuration: TOML file keys merged with command-line flags.
//! Precedence: CLI flag > `LRPTEXT_OUT_DIR` (output dir only) > config
//! file > built-in default.

use std::path::{Path, PathBuf};

use lrptext_core::{Error, Result};
use serde::Deserialize;

/// Optional keys accepted in the TOML config file. Every key has a
/// matching command-line flag.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub format: Option<String>,
    pub text_field: Option<String>,
    pub label_field: Option<String>,
    pub embedding: Option<PathBuf>,
    pub synthetic_dim: Option<usize>,
    pub arch: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<String>,
    pub max_len: Option<usize>,
    pub patience: Option<usize>,
    pub train_fraction: Option<f64>,
    pub bilstm_units: Option<Vec<usize>>,
    pub dense_hidden: Option<usize>,
    pub conv_filters: Option<usize>,
    pub conv_kernel: Option<usize>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::config(format!("config file {}: {e}", path.display())))
    }
}

/// `cli.or(file)`, the precedence rule applied field by field.
pub fn pick<T: Clone>(cli: &Option<T>, file: &Option<T>) -> Option<T> {
    cli.clone().or_else(|| file.clone())
}

/// Output directory with the env-var override slotted between CLI and
/// file values.
pub fn resolve_out_dir(cli: &Option<PathBuf>, file: &Option<PathBuf>) -> PathBuf {
    cli.clone()
        .or_else(|| std::env::var_os("LRPTEXT_OUT_DIR").map(PathBuf::from))
        .or_else(|| file.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn require<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| Error::config(format!("missing required field '{field}'")))
}

pub fn require_path(value: Option<PathBuf>, field: &str) -> Result<PathBuf> {
    let path = require(value, field)?;
    if !path.exists() {
        return Err(Error::config(format!(
            "{field}: path does not exist: {}",
            path.display()
        )));
    }
    Ok(path)
}
