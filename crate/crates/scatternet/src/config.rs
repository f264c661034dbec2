//! Flat `key = value` configuration files with `#` comments.

use std::fs;
use std::path::Path;

use scatternet_core::trainer::TrainConfig;

use crate::{Error, Result};

pub const SEED_VAR: &str = "SCATTERNET_SEED";

pub fn parse_pairs(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(origin, format!("line {}: expected key = value", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, path)
}

pub fn render_pairs(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Defaults, then the file, then `SCATTERNET_SEED` (`env_seed`), then the
/// command-line pairs.
pub fn resolve(file: &[(String, String)], env_seed: Option<&str>, cli: &[(String, String)]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    cfg.apply(file)?;
    if let Some(seed) = env_seed {
        cfg.set("seed", seed)?;
    }
    cfg.apply(cli)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Splits a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Usage(format!("--set expects key=value, got {s:?}")))
}
