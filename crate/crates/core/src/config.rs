//! TOML configuration file. Every section and key is optional; missing
//! values take their defaults.
//!
//! ```toml
//! [env]
//! d_threshold = 10.0
//! angular_step = "Degrees10"
//!
//! [train]
//! max_episodes = 300
//! observation = { kind = "frames", resolution = 32 }
//!
//! [session]
//! tick_hz = 30.0
//! mode = "semi_autonomous"
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbiter::{ArbiterConfig, OperatorConfig, TrialPlan};
use crate::ddqn::TrainConfig;
use crate::gateway::SessionConfig;
use crate::renderer::RenderConfig;
use crate::sim_env::EnvConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub env: EnvConfig,
    pub render: RenderConfig,
    pub train: TrainConfig,
    pub arbiter: ArbiterConfig,
    pub operator: OperatorConfig,
    pub plan: TrialPlan,
    pub session: SessionConfig,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }
}
