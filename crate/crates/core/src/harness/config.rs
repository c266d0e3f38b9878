use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::optim::AdamConfig;
use super::synth::SynthSpec;
use crate::error::{Error, Result};
use crate::model::{LossConfig, ModelConfig};

/// Where training and validation pairs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory with `A/`, `B/` and `label/` PNGs. Synthetic data when absent.
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    /// Training stream; validation continues the same stream after it.
    pub synth: SynthSpec,
    /// Synthetic validation pairs, drawn after the training ones.
    pub holdout: usize,
    /// Random dihedral transform per training pair.
    pub augment: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { train_dir: None, val_dir: None, synth: SynthSpec::default(), holdout: 4, augment: true }
    }
}

/// Optimisation loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimiser steps.
    pub max_steps: Option<u64>,
    /// Stop once a training-batch loss falls below this value.
    pub target_loss: Option<f64>,
    /// Stop starting new epochs after this many seconds.
    pub time_limit_secs: Option<f64>,
    /// Shuffling and augmentation seed.
    pub seed: u64,
    /// Logs and checkpoints; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    pub optimizer: AdamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 10,
            batch_size: 4,
            max_steps: None,
            target_loss: None,
            time_limit_secs: None,
            seed: 0,
            out_dir: None,
            optimizer: AdamConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if self.target_loss.is_some_and(|t| !t.is_finite() || t <= 0.0) {
            return Err(Error::config("target_loss must be positive"));
        }
        self.optimizer.validate()
    }
}

/// Everything a CLI run needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub data: DataConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.data.synth.validate()?;
        self.run.validate()
    }

    /// One seed for initialisation, data generation and shuffling.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.data.synth.seed = seed;
        self.run.seed = seed;
    }
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::config(e.to_string())
}

/// Set `path` (dot separated) in a JSON object tree, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("bad override key {path:?}")));
    }
    for key in &keys[..keys.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override {path}: {key} is not inside an object")))?;
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| Error::config(format!("override {path}: parent is not an object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Parse `key.path=value`; the value is JSON, or a bare string when it is not.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::config(format!("override {s:?} lacks '='")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Read an optional JSON file, apply overrides and the seed, then validate.
pub fn load_config(path: Option<&Path>, overrides: &[(String, Value)], seed: Option<u64>) -> Result<ExperimentConfig> {
    let root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    config_from_value(root, overrides, seed)
}

/// Same as [`load_config`] for an already parsed JSON tree.
pub fn config_from_value(mut root: Value, overrides: &[(String, Value)], seed: Option<u64>) -> Result<ExperimentConfig> {
    if !root.is_object() {
        return Err(Error::config("config must be a JSON object"));
    }
    for (k, v) in overrides {
        set_path(&mut root, k, v.clone())?;
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(root).map_err(config_error)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    Ok(cfg)
}
