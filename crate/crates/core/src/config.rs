//! Engine configuration file (TOML). Every table and key is optional.
//!
//! ```toml
//! [detector]
//! gaze_off_threshold_s = 10
//! social_visit_min_s = 300
//! social_visit_count = 2
//! cooldown_s = 120
//!
//! [mediation]
//! similarity_threshold = 0.5
//! llm_timeout_ms = 800
//! llm_fallback = true
//! llm_model = "gpt-4o"
//!
//! [mediation.presets.warm_calm]
//! brightness_pct = 40
//! color_temp_k = 2700
//! ramp_s = 120
//!
//! [actuators]
//! sound = "off"
//! screen = "normal"
//! light = { brightness_pct = 70, color_temp_k = 4000 }
//!
//! [metrics]
//! report_pre_window_s = 300
//! report_post_window_s = 180
//! gaze_window_s = 300
//!
//! [llm]
//! base_url = "https://api.openai.com/v1"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuation::ActuatorDefaults;
use crate::detect::DetectorConfig;
use crate::mediation::MediationConfig;
use crate::metrics::MetricsConfig;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("CONFIG_ERROR: {path}: {reason}")]
    Invalid { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub base_url: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig { base_url: "https://api.openai.com/v1".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub detector: DetectorConfig,
    pub mediation: MediationConfig,
    pub actuators: ActuatorDefaults,
    pub metrics: MetricsConfig,
    pub llm: LlmConfig,
}

impl EngineConfig {
    pub fn parse(source: &str, text: &str) -> Result<Self, ConfigError> {
        let err = |reason: String| ConfigError::Invalid { path: source.to_string(), reason };
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| err(e.message().to_string()))?;
        cfg.detector.validate().map_err(err)?;
        cfg.mediation.validate().map_err(err)?;
        for (name, v) in [
            ("actuators.light.brightness_pct", i64::from(cfg.actuators.light.brightness_pct)),
            ("actuators.light.color_temp_k", i64::from(cfg.actuators.light.color_temp_k)),
        ] {
            let ok = if name.ends_with("pct") {
                crate::model::BRIGHTNESS_RANGE.contains(&v)
            } else {
                crate::model::COLOR_TEMP_RANGE.contains(&v)
            };
            if !ok {
                return Err(err(format!("{name} = {v} is out of range")));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid { path: path.display().to_string(), reason: e.to_string() })?;
        EngineConfig::parse(&path.display().to_string(), &text)
    }
}
