//! TOML run files merged over preset defaults.

use std::path::{Path, PathBuf};

use hasd::trainer::{config_hash, Mode, Preset, TrainerConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// A training run as described by its config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub output_dir: Option<PathBuf>,
}

/// Recursive overlay: tables merge key by key, anything else replaces.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
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

fn toml_table(text: &str, origin: &str) -> Result<Value, CliError> {
    let t: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    serde_json::to_value(t).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

/// Deserializes `base` with `overlay` applied; unknown keys are rejected by
/// the target types.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, overlay: Value, origin: &str) -> Result<T, CliError> {
    let mut v = serde_json::to_value(base).expect("config serializes");
    merge(&mut v, overlay);
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

fn take_str(v: &mut Value, key: &str, origin: &str) -> Result<Option<String>, CliError> {
    match v.as_object_mut().and_then(|o| o.remove(key)) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(CliError::Config(format!("{origin}: '{key}' must be a string, got {other}"))),
    }
}

pub fn parse_run_config(text: &str, origin: &str) -> Result<RunConfig, CliError> {
    let mut v = toml_table(text, origin)?;
    let preset: Preset = take_str(&mut v, "preset", origin)?
        .map(|s| s.parse())
        .transpose()
        .map_err(|e: hasd::Error| CliError::Config(format!("{origin}: {e}")))?
        .unwrap_or_default();
    let mode: Mode = take_str(&mut v, "mode", origin)?
        .map(|s| s.parse())
        .transpose()
        .map_err(|e: hasd::Error| CliError::Config(format!("{origin}: {e}")))?
        .unwrap_or_default();
    let output_dir = take_str(&mut v, "output_dir", origin)?.map(PathBuf::from);
    let trainer = overlay(&TrainerConfig::preset(preset, mode), v, origin)?;
    trainer
        .validate()
        .map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    Ok(RunConfig { trainer, output_dir })
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_run_config(&text, &path.display().to_string())
}

/// Optional TOML overlay for any config type.
pub fn load_overlay<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(base) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let origin = path.display().to_string();
    overlay(&base, toml_table(&text, &origin)?, &origin)
}

/// Every field of the run spelled out, preceded by its content hash.
pub fn resolved_toml(cfg: &TrainerConfig) -> String {
    let body = toml::to_string(cfg).expect("config serializes to toml");
    format!("# config_hash = {}\n{body}", config_hash(cfg))
}
