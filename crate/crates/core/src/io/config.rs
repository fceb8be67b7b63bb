//! Flat `key = value` training configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the
//! [`TrainConfig`] field names, with encoder fields unprefixed.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{GeoError, Result};
use crate::linalg::Precision;
use crate::trainer::TrainConfig;

pub type ConfigMap = BTreeMap<String, String>;

pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| GeoError::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
        let key = key.trim();
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(GeoError::InvalidConfig(format!("line {}: duplicate key `{key}`", n + 1)));
        }
    }
    Ok(map)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigMap> {
    parse_config(&super::read_text(path.as_ref())?)
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| GeoError::InvalidConfig(format!("bad value `{raw}` for `{key}`")))
}

fn precision(raw: &str) -> Result<Precision> {
    match raw {
        "f64" => Ok(Precision::F64),
        "f32" => Ok(Precision::F32),
        _ => Err(GeoError::InvalidConfig(format!("precision must be f64 or f32, got `{raw}`"))),
    }
}

/// Overwrites the fields named in `map`; unknown keys are rejected.
pub fn apply_config(map: &ConfigMap, config: &mut TrainConfig) -> Result<()> {
    for (key, raw) in map {
        let k = key.as_str();
        match k {
            "batch_size" => config.batch_size = value(k, raw)?,
            "views" => config.views = value(k, raw)?,
            "queue_size" => config.queue_size = value(k, raw)?,
            "sigma_eta" => config.sigma_eta = value(k, raw)?,
            "sigma_eta_prime" => config.sigma_eta_prime = value(k, raw)?,
            "lr" => config.lr = value(k, raw)?,
            "weight_decay" => config.weight_decay = value(k, raw)?,
            "gamma" => config.gamma = value(k, raw)?,
            "epochs" => config.epochs = value(k, raw)?,
            "seed" => config.seed = value(k, raw)?,
            "head_hidden" => config.head_hidden = value(k, raw)?,
            "tau_init" => config.tau_init = value(k, raw)?,
            "stop_grad_queue" => config.stop_grad_queue = value(k, raw)?,
            "precision" => config.precision = precision(raw)?,
            "branches" => config.encoder.branches = value(k, raw)?,
            "sigma_min" => config.encoder.sigma_min = value(k, raw)?,
            "sigma_max" => config.encoder.sigma_max = value(k, raw)?,
            "rff_dim" => config.encoder.rff_dim = value(k, raw)?,
            "hidden_dim" => config.encoder.hidden_dim = value(k, raw)?,
            "hidden_layers" => config.encoder.hidden_layers = value(k, raw)?,
            "embed_dim" => config.encoder.embed_dim = value(k, raw)?,
            _ => return Err(GeoError::InvalidConfig(format!("unknown config key `{k}`"))),
        }
    }
    Ok(())
}
