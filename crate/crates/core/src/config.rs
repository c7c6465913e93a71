//! Experiment configuration loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{NetworkConfig, Td3Config};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::ode::OdeParams;

const BUNDLED: &str = include_str!("../config/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ode: OdeParams,
    pub env: EnvConfig,
    pub agent: Td3Config,
    pub network: NetworkConfig,
}

impl ExperimentConfig {
    /// The configuration shipped in `config/default.toml`.
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED).expect("bundled configuration is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.ode.validate()?;
        self.env.validate()?;
        self.agent.validate()?;
        self.network.validate()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
