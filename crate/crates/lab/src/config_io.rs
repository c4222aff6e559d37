//! Model configs from JSON files and named presets.

use std::path::{Path, PathBuf};

use plm_core::model::{presets, ModelConfig};

use crate::error::{LabError, Result};

/// Directory searched for `<name>.json` when a preset is not built in.
pub const PRESET_DIR_ENV: &str = "PLM_LAB_PRESET_DIR";

/// Parses a config; unknown fields are rejected and the result is validated.
pub fn parse_config(text: &str, context: &str) -> Result<ModelConfig> {
    let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| LabError::json(context, e))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

pub fn save_config(cfg: &ModelConfig, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg).map_err(|e| LabError::json("config", e))?;
    std::fs::write(path, text + "\n").map_err(|e| LabError::io(path, e))
}

/// A built-in preset, or `$PLM_LAB_PRESET_DIR/<name>.json`.
pub fn resolve_preset(name: &str) -> Result<ModelConfig> {
    if let Some(cfg) = presets::by_name(name) {
        return Ok(cfg);
    }
    if let Some(dir) = std::env::var_os(PRESET_DIR_ENV) {
        let path = PathBuf::from(dir).join(format!("{name}.json"));
        if path.is_file() {
            return load_config(&path);
        }
    }
    let known: Vec<&str> = presets::all().into_iter().map(|(n, _)| n).collect();
    Err(LabError::Config(format!(
        "unknown preset `{name}` (built in: {})",
        known.join(", ")
    )))
}

/// `--config` wins over `--preset`; with neither, `default`.
pub fn resolve(config: Option<&Path>, preset: Option<&str>, default: &str) -> Result<(String, ModelConfig)> {
    match (config, preset) {
        (Some(path), _) => {
            let name = path
                .file_stem()
                .map_or_else(|| "config".into(), |s| s.to_string_lossy().into_owned());
            Ok((name, load_config(path)?))
        }
        (None, Some(name)) => Ok((name.to_string(), resolve_preset(name)?)),
        (None, None) => Ok((default.to_string(), resolve_preset(default)?)),
    }
}
