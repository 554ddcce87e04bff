//! Experiment configuration: one JSON document, with dotted-key overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::alerts::{AlertCriteria, AlertType};
use crate::dsp::DspConfig;
use crate::evaluation::{ExperimentArm, ExperimentSettings};
use crate::forest::ForestHyper;
use crate::label_model::LabelModelHyper;
use crate::labeling::LfConfig;
use crate::pipeline::WindowSettings;
use crate::synth::CohortSpec;

pub const SEED_ENV: &str = "VITALWS_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("no seed: set `seed` in the config, pass --seed, or export {SEED_ENV}")]
    MissingSeed,
    #[error("{SEED_ENV}=`{0}` is not an unsigned integer")]
    BadSeedEnv(String),
}

fn all_taus() -> Vec<AlertType> {
    AlertType::ALL.to_vec()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Manifest tree written by `synth` or by an export.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Ground-truth CSV; defaults to `labels.csv` inside `data_dir`.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Generate the cohort in memory instead of reading `data_dir`.
    #[serde(default)]
    pub synth: Option<CohortSpec>,
    #[serde(default = "all_taus")]
    pub tau: Vec<AlertType>,
    #[serde(default)]
    pub criteria: AlertCriteria,
    #[serde(default)]
    pub lf: LfConfig,
    #[serde(default)]
    pub dsp: DspConfig,
    #[serde(default = "default_class_balance")]
    pub class_balance: f64,
    #[serde(default)]
    pub label_model: LabelModelHyper,
    #[serde(default)]
    pub forest: ForestHyper,
    #[serde(default = "default_importance_repeats")]
    pub importance_repeats: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "ExperimentArm::default_set")]
    pub arms: Vec<ExperimentArm>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Threads; unset means all available. Results do not depend on it.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_class_balance() -> f64 {
    ExperimentSettings::default().class_balance
}

fn default_importance_repeats() -> usize {
    ExperimentSettings::default().importance_repeats
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets a dotted key such as `forest.n_trees` from its command-line text.
    /// The text is read as JSON when it parses, otherwise as a string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut doc;
        for (depth, part) in parts.iter().enumerate() {
            let obj = node.as_object_mut().ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
            if !obj.contains_key(*part) {
                if depth == 0 || !is_optional_table(parts[0]) {
                    return Err(ConfigError::UnknownKey(key.into()));
                }
                obj.insert(part.to_string(), Value::Null);
            }
            let child = obj.get_mut(*part).expect("checked above");
            if depth + 1 < parts.len() && child.is_null() {
                // An unset optional table such as `synth` starts from its defaults.
                *child = default_table(parts[0]).ok_or_else(|| ConfigError::UnknownKey(key.into()))?;
            }
            node = child;
        }
        *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *self = serde_json::from_value(doc).map_err(|e| ConfigError::Parse(format!("{key}: {e}")))?;
        Ok(())
    }

    /// The seed from the config, else from the environment.
    pub fn resolve_seed(&self) -> Result<u64, ConfigError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| ConfigError::BadSeedEnv(v)),
            Err(_) => Err(ConfigError::MissingSeed),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        match (&self.data_dir, &self.synth) {
            (Some(_), Some(_)) => return bad("set either data_dir or synth, not both".into()),
            (None, None) => return bad("set data_dir or synth".into()),
            (None, Some(spec)) => spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?,
            _ => {}
        }
        if self.tau.is_empty() {
            return bad("tau is empty".into());
        }
        self.criteria.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.class_balance > 0.0 && self.class_balance < 1.0) {
            return bad(format!("class_balance must lie in (0, 1), got {}", self.class_balance));
        }
        if self.arms.is_empty() {
            return bad("arms is empty".into());
        }
        if self.forest.n_trees == 0 || self.forest.max_depth == 0 {
            return bad("forest.n_trees and forest.max_depth must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        Ok(())
    }

    pub fn window_settings(&self) -> WindowSettings {
        WindowSettings { criteria: self.criteria.clone(), lf: self.lf.clone(), dsp: self.dsp.clone() }
    }

    pub fn experiment_settings(&self) -> Result<ExperimentSettings, ConfigError> {
        Ok(ExperimentSettings {
            class_balance: self.class_balance,
            label_model: self.label_model,
            forest: self.forest,
            seed: self.resolve_seed()?,
            importance_repeats: self.importance_repeats,
        })
    }

    pub fn labels_path(&self) -> Option<PathBuf> {
        self.labels
            .clone()
            .or_else(|| self.data_dir.as_ref().map(|d| d.join(crate::data::LABELS_FILE)))
    }
}

fn is_optional_table(key: &str) -> bool {
    key == "synth"
}

fn default_table(key: &str) -> Option<Value> {
    match key {
        "synth" => Some(serde_json::to_value(CohortSpec::default()).expect("spec serializes")),
        _ => None,
    }
}

/// Every leaf key of the default config with its default, sorted by key.
/// Optional tables are expanded from their own defaults.
pub fn config_keys() -> Vec<(String, String)> {
    let mut doc = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
    if let Some(obj) = doc.as_object_mut() {
        if let Some(v) = obj.get_mut("synth") {
            *v = default_table("synth").expect("known table");
        }
    }
    let mut out = Vec::new();
    flatten("", &doc, &mut out);
    for (k, v) in &mut out {
        if k == "seed" {
            *v = format!("(required; falls back to {SEED_ENV})");
        } else if k.starts_with("synth.") {
            v.push_str("  (only when synth is used)");
        }
    }
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) if !map.is_empty() && !is_arm(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn is_arm(map: &Map<String, Value>) -> bool {
    map.contains_key("labeler")
}
