//! Synthetic worlds, the multi-day simulation and the evaluation suites
//! behind the `egomem` binary.

mod metrics;
mod scenario;
mod simulate;
mod suites;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{MetricRow, MetricsTable, Target, TargetOp};
pub use scenario::{
    build_day, synth_scenario, transcript_of, walkthrough_scenario, DaySource, FactSpec, Person, PlacedDialog,
    QueryCase, RelationSpec, Scenario, ScenarioSpec, GREETING_BASE, INTRO_BASE, QUESTION_BASE,
};
pub use simulate::{simulate_lifelong_run, DayReport, LifelongReport};
pub use suites::{
    eval_retrieval, eval_streams, eval_suite, eval_trigger, eval_verification, seed_store, shifted_population,
    ShiftedPopulation, Suite,
};

use crate::backends::BackendError;
use crate::runtime::{AgentConfig, RuntimeError};
use crate::store::StoreError;
use crate::stream::StreamError;
use crate::verification::VerificationError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario infeasible: {0}")]
    Infeasible(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// The `--config` file: agent settings plus the synthetic scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub agent: AgentConfig,
    pub scenario: ScenarioSpec,
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: CliConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.agent.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c = CliConfig::from_toml("[scenario]\nusers = 8\n[agent]\nloss_ticks = 3\n").unwrap();
        assert_eq!(c.scenario.users, 8);
        assert_eq!(c.scenario.max_neighbors, ScenarioSpec::default().max_neighbors);
        assert_eq!(c.agent.loss_ticks, 3);
    }

    #[test]
    fn config_round_trips() {
        let c = CliConfig::default();
        assert_eq!(CliConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn bad_agent_config_is_rejected() {
        assert!(CliConfig::from_toml("[agent]\npolling_interval_s = 0.0\n").is_err());
    }
}
