use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::environment::ScenarioConfig;
use crate::mcts::SearchConfig;
use crate::ppo::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: usize,
    /// Past agents sampled for each evaluation.
    pub eval_opponents: usize,
    pub games_per_opponent: usize,
    /// Train on raw policy samples instead of searched actions.
    pub no_mcts: bool,
    pub ppo: TrainConfig,
    pub search: SearchConfig,
    pub scenario: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 50,
            eval_opponents: 36,
            games_per_opponent: 3,
            no_mcts: false,
            ppo: TrainConfig::default(),
            search: SearchConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

impl RunConfig {
    /// Short pipeline-liveness profile.
    pub fn smoke() -> Self {
        Self::default().into_smoke()
    }

    pub fn into_smoke(mut self) -> Self {
        self.iterations = 10;
        self.ppo.batch_size = 256;
        self.eval_opponents = 4;
        self
    }

    /// Desk-scale trend profile: full batch, 12 opponents.
    pub fn reduced() -> Self {
        Self { eval_opponents: 12, ..Self::default() }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ppo.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.search.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scenario.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.iterations == 0 || self.eval_opponents == 0 || self.games_per_opponent == 0 {
            return Err(ConfigError::Invalid(
                "iterations, eval_opponents and games_per_opponent must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
