//! The run configuration: one JSON document covering the model, training,
//! preprocessing, dataset location and seed.
//!
//! Resolution order: defaults → config file → `--set key=value` overrides →
//! dedicated flags (`--seed`, `--out`, `--no-*`). A `model_preset` key
//! (`desk`, `full`, `tiny`) selects the base model settings that the file's
//! `model` object then overrides field by field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use swinfundus::preprocess::PreprocessConfig;
use swinfundus::{ModelConfig, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives parameter initialization, shuffling, dropout and augmentation.
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    /// Dataset directory holding `manifest.json`.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Command-line switches layered over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub set: Vec<String>,
    pub no_clahe: bool,
    pub no_crop: bool,
    pub no_augment: bool,
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON and falls back to a
/// plain string.
fn apply_set(doc: &mut Value, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got {assignment:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::config(format!(
            "--set has a malformed key {key:?}"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("--set {key}: {part} is not an object")))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::config(format!("--set {key}: parent is not an object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Builds the effective configuration and validates it.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> CliResult<RunConfig> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| CliError::config(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        if !doc.is_object() {
            return Err(CliError::config("the config file must hold a JSON object"));
        }
        for s in &overrides.set {
            apply_set(&mut doc, s)?;
        }
        let obj = doc.as_object_mut().expect("checked above");
        if let Some(preset) = obj.remove("model_preset") {
            let name = preset
                .as_str()
                .ok_or_else(|| CliError::config("model_preset must be a string"))?;
            let mut base = serde_json::to_value(ModelConfig::preset(name)?)?;
            if let Some(m) = obj.remove("model") {
                merge(&mut base, m);
            }
            obj.insert("model".into(), base);
        }
        let mut cfg: RunConfig = serde_json::from_value(doc)
            .map_err(|e| CliError::config(format!("invalid configuration: {e}")))?;
        if let Some(seed) = overrides.seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = &overrides.out {
            cfg.out_dir = out.clone();
        }
        if overrides.no_clahe {
            cfg.preprocess.clahe = false;
        }
        if overrides.no_crop {
            cfg.preprocess.crop = false;
        }
        if overrides.no_augment {
            cfg.train.augment = false;
        }
        if let Some(seed) = cfg.seed {
            cfg.train.seed = seed;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.preprocess.clahe_params.validate()?;
        Ok(cfg)
    }

    pub fn require_seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| {
            CliError::config("seed: no seed given (set `seed` in the config or pass --seed)")
        })
    }

    /// The dataset directory, checked to exist and to contain a manifest.
    pub fn require_data_root(&self) -> CliResult<&Path> {
        let root = self
            .data_root
            .as_deref()
            .ok_or_else(|| CliError::config("data_root: no dataset directory configured"))?;
        if !root.is_dir() {
            return Err(CliError::config(format!(
                "data_root: {} is not a directory",
                root.display()
            )));
        }
        let manifest = root.join(swinfundus::preprocess::MANIFEST_FILE);
        if !manifest.is_file() {
            return Err(CliError::config(format!(
                "data_root: {} has no {}",
                root.display(),
                swinfundus::preprocess::MANIFEST_FILE
            )));
        }
        Ok(root)
    }

    /// SHA-256 of the canonical JSON of everything except `out_dir`.
    pub fn hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&keyed).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `<out_dir>/<first 12 hash digits>-s<seed>`.
    pub fn run_dir(&self) -> CliResult<PathBuf> {
        let seed = self.require_seed()?;
        Ok(self.out_dir.join(format!("{}-s{seed}", &self.hash()[..12])))
    }
}
