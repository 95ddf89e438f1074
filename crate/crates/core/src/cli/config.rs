//! Run configuration: one TOML section per subcommand, with `key=value`
//! overrides from the command line applied on top.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::features::FeatureConfig;
use crate::data::synth::{Recipe, Split};
use crate::error::{Error, Result};
use crate::evalmetrics::EvalSettings;
use crate::infer::PruneParams;
use crate::method::Method;
use crate::net::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub recipe: Recipe,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { out_dir: "data".into(), recipe: Recipe::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    /// Continue from this checkpoint for `epochs` more epochs.
    pub resume: Option<PathBuf>,
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(flatten)]
    pub features: FeatureConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            manifest: "data/manifest.json".into(),
            checkpoint: "model.json".into(),
            trace: "trace.csv".into(),
            resume: None,
            train: TrainConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: Split,
    pub out_dir: PathBuf,
    /// Expected method of the checkpoint, if set.
    pub method: Option<Method>,
    pub prune: bool,
    #[serde(flatten)]
    pub prune_params: PruneParams,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            checkpoint: "model.json".into(),
            manifest: "data/manifest.json".into(),
            split: Split::Test,
            out_dir: "predictions".into(),
            method: None,
            prune: false,
            prune_params: PruneParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub manifest: PathBuf,
    pub predictions: PathBuf,
    pub split: Split,
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub settings: EvalSettings,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            manifest: "data/manifest.json".into(),
            predictions: "predictions".into(),
            split: Split::Test,
            out_dir: "eval".into(),
            settings: EvalSettings::default(),
        }
    }
}

/// Parse a command-line override value: TOML syntax if it parses, a bare string otherwise.
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Report keys of `input` that did not survive a deserialize/serialize round trip.
fn unknown_keys(input: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in input {
        match known.get(k) {
            None => out.push(format!("{prefix}{k}")),
            Some(toml::Value::Table(kt)) => {
                if let toml::Value::Table(it) = v {
                    unknown_keys(it, kt, &format!("{prefix}{k}."), out);
                }
            }
            Some(_) => {}
        }
    }
}

/// Load section `section` of an optional TOML file, apply `key=value`
/// overrides and deserialize. Unknown keys are rejected.
pub fn load_section<T>(file: Option<&Path>, section: &str, overrides: &[String]) -> Result<T>
where
    T: DeserializeOwned + Serialize,
{
    let mut table = toml::Table::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut doc: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(v) = doc.remove(section) {
            match v {
                toml::Value::Table(t) => table = t,
                _ => return Err(Error::Config(format!("[{section}] must be a table"))),
            }
        }
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        table.insert(k.trim().to_string(), override_value(v.trim()));
    }
    let value: T = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("[{section}]: {}", e.message())))?;
    let known = match toml::Value::try_from(&value).map_err(|e| Error::Config(e.to_string()))? {
        toml::Value::Table(t) => t,
        _ => toml::Table::new(),
    };
    let mut bad = Vec::new();
    unknown_keys(&table, &known, "", &mut bad);
    if !bad.is_empty() {
        return Err(Error::Config(format!("[{section}]: unknown keys {}", bad.join(", "))));
    }
    Ok(value)
}
