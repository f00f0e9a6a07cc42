//! JSON config files and the flags > file > defaults merge.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutArg {
    #[default]
    Rows,
    Cols,
}

impl From<LayoutArg> for nrc_lab::io::Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Rows => nrc_lab::io::Layout::SamplesAsRows,
            LayoutArg::Cols => nrc_lab::io::Layout::SamplesAsColumns,
        }
    }
}

/// Flags that every command accepts.
#[derive(Debug, Clone, Default)]
pub struct Global {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Overlay every non-null field of `flags` on the contents of `path`.
pub fn merge<T: Serialize + DeserializeOwned + Clone>(flags: &T, path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(flags.clone());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: T = serde_path_to_error::deserialize(de).map_err(|e| {
        CliError::usage(format!(
            "invalid config {}: at field `{}`: {}",
            path.display(),
            e.path(),
            e.inner()
        ))
    })?;
    let mut base = serde_json::to_value(file).expect("config is plain data");
    let over = serde_json::to_value(flags).expect("flags are plain data");
    if let (Some(base), Some(over)) = (base.as_object_mut(), over.as_object()) {
        for (k, v) in over {
            if !v.is_null() {
                base.insert(k.clone(), v.clone());
            }
        }
    }
    serde_json::from_value(base).map_err(|e| CliError::usage(format!("invalid merged config: {e}")))
}

pub fn require<T>(value: Option<T>, name: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::usage(format!("missing required setting `{name}` (flag or config)")))
}

pub fn out_dir(out: &Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = require(out.clone(), "out")?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn write_resolved<T: Serialize>(dir: &Path, resolved: &T) -> CliResult<()> {
    nrc_lab::io::write_json(dir.join("resolved_config.json"), resolved)?;
    Ok(())
}
