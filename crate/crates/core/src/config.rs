//! Pipeline configuration as a TOML document with one table per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::MatchMode;
use crate::embed::ProviderConfig;
use crate::error::{CoreError, Result};
use crate::extract::ExtractionConfig;
use crate::orchestrator::ReasonConfig;
use crate::selector::{ModelConfig, TrainingConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub provider: ProviderConfig,
    pub extraction: ExtractionConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub reasoning: ReasonConfig,
    pub match_mode: MatchMode,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.extraction.validate()?;
        self.model.validate()?;
        let dim = match self.provider {
            ProviderConfig::DeterministicHash { dimension } | ProviderConfig::HttpService { dimension } => Some(dimension),
            ProviderConfig::TableFile { .. } => None,
        };
        if let Some(d) = dim {
            if d != self.model.encoder.d_in {
                return Err(CoreError::Config(format!(
                    "provider dimension {d} differs from encoder d_in {}",
                    self.model.encoder.d_in
                )));
            }
        }
        if self.training.learning_rate <= 0.0 || !self.training.learning_rate.is_finite() {
            return Err(CoreError::Config("learning_rate must be positive".into()));
        }
        if self.reasoning.max_iterations == 0 {
            return Err(CoreError::Config("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}
