//! Config file loading and saving.
//!
//! One TOML document holds a `[scenario]` section and a `[train]` section;
//! omitted keys fall back to the built-in defaults, unknown keys are
//! rejected by name. Serialization is lossless for every `f64` field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marl::TrainConfig;
use crate::scenario::ScenarioConfig;

/// The full on-disk configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
}

impl AppConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_losslessly() {
        let cfg = AppConfig::default();
        let text = cfg.to_toml_string().unwrap();
        let back = AppConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn awkward_floats_round_trip() {
        let mut cfg = AppConfig::default();
        cfg.scenario.noise_power_w = 1.0e-14;
        cfg.scenario.tx_power_w = 0.1 + 0.2; // 0.30000000000000004
        cfg.scenario.fading_corr = std::f64::consts::FRAC_1_SQRT_2;
        cfg.train.actor_lr = 3.0e-4;
        let text = cfg.to_toml_string().unwrap();
        let back = AppConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_use_defaults() {
        let text = r#"
[scenario]
n_vehicles = 6
seed = 99

[train]
episodes = 7
"#;
        let cfg = AppConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.scenario.n_vehicles, 6);
        assert_eq!(cfg.scenario.seed, 99);
        assert_eq!(cfg.scenario.k_tasks, 3);
        assert_eq!(cfg.train.episodes, 7);
        assert_eq!(cfg.train.batch_size, 64);
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = r#"
[scenario]
bandwith_hz = 5e7
"#;
        let err = AppConfig::from_toml_str(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bandwith_hz"), "error should name the field: {msg}");
    }

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = AppConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, AppConfig::default());
    }
}
