//! Runtime configuration: defaults, then a TOML file, then `CLIC_*` variables.
//!
//! `CLIC_MONITOR_HEARTBEAT_MS=500` overrides `monitor.heartbeat_ms`; the
//! first underscore after the prefix separates section from key.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitor::MonitorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalsConfig {
    pub dynamic_weight_cap: f64,
}

impl Default for GoalsConfig {
    fn default() -> Self {
        Self { dynamic_weight_cap: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub buffer_cap: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self { buffer_cap: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub grain: f64,
    /// Countdown on each negotiation round's offer.
    pub offer_window_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self { grain: 0.5, offer_window_ms: 30_000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub monitor: MonitorConfig,
    pub goals: GoalsConfig,
    pub runtime: RuntimeConfig,
    pub gateway: GatewayConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("environment variable {0} does not name a config key")]
    UnknownVariable(String),
}

pub const ENV_PREFIX: &str = "CLIC_";

const SECTIONS: [&str; 4] = ["monitor", "goals", "runtime", "gateway"];

fn set(root: &mut toml::Table, section: &str, key: &str, raw: &str) -> Result<(), ConfigError> {
    root.entry(section)
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| ConfigError::Parse(format!("{section} is not a table")))?
        .insert(key.to_string(), scalar(raw));
    Ok(())
}

fn scalar(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = raw.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = raw.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(raw.to_string())
    }
}

impl Config {
    /// Layers `file_text` and the `CLIC_*` entries of `env` over the defaults.
    pub fn load<I>(file_text: Option<&str>, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        Self::layered(file_text, env, &[])
    }

    /// As [`Config::load`], with `section.key=value` flag overrides on top.
    pub fn layered<I>(file_text: Option<&str>, env: I, flags: &[(String, String)]) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut root: toml::Table = match file_text {
            Some(t) => t.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?,
            None => toml::Table::new(),
        };
        let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (name, raw) in vars {
            let rest = name[ENV_PREFIX.len()..].to_ascii_lowercase();
            let Some((section, key)) = rest.split_once('_') else {
                return Err(ConfigError::UnknownVariable(name));
            };
            if SECTIONS.contains(&section) {
                set(&mut root, section, key, &raw)?;
            }
        }
        for (path, raw) in flags {
            match path.split_once('.') {
                Some((section, key)) if SECTIONS.contains(&section) => set(&mut root, section, key, raw)?,
                _ => return Err(ConfigError::Parse(format!("{path} does not name a config key"))),
            }
        }
        let cfg: Config = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_env(file_text: Option<&str>) -> Result<Self, ConfigError> {
        Self::load(file_text, std::env::vars())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.monitor;
        let bad = |what: &str| Err(ConfigError::Parse(format!("{what} out of range")));
        if !(m.alpha > 0.0 && m.alpha <= 1.0) {
            return bad("monitor.alpha");
        }
        if m.window == 0 || m.k_missed == 0 || m.heartbeat_ms == 0 || m.epoch_s == 0 {
            return bad("monitor window, k_missed, heartbeat_ms and epoch_s");
        }
        if !(0.0..=1.0).contains(&self.goals.dynamic_weight_cap) {
            return bad("goals.dynamic_weight_cap");
        }
        if self.runtime.buffer_cap == 0 {
            return bad("runtime.buffer_cap");
        }
        if !(self.gateway.grain > 0.0) {
            return bad("gateway.grain");
        }
        Ok(())
    }
}
