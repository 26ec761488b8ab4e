//! TOML configuration shared by all commands.
//!
//! ```toml
//! [refine]
//! generations = 40
//!
//! [weights]
//! ct = 0.5
//!
//! [metrics]
//! translation_cm = 3.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Thresholds;
use crate::objective::LossWeights;
use crate::refiner::RefinementConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub refine: RefinementConfig,
    pub weights: LossWeights,
    pub metrics: Thresholds,
}

impl Config {
    pub fn from_toml(text: &str, context: &str) -> Result<Config> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Parse {
            context: context.to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidValue(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.refinement().validate()?;
        self.metrics.validate()
    }

    /// Applies a `key=value` weight override.
    pub fn set_weight(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidValue(format!("weight override '{assignment}' is not key=value")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidValue(format!("weight override '{assignment}' has a non-numeric value")))?;
        self.weights.set(key.trim(), value)?;
        self.weights.validate()
    }

    /// Refinement settings with the configured loss weights.
    pub fn refinement(&self) -> RefinementConfig {
        RefinementConfig {
            weights: self.weights.clone(),
            ..self.refine.clone()
        }
    }
}
