//! Scenario files: one JSON document describing a topology, its traffic, and
//! optional campaign / optimizer / monitor configuration.
//!
//! Parsing is strict (unknown fields are rejected) and every loaded scenario
//! carries the SHA-256 of its raw bytes so reports can state exactly which
//! input they were produced from.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::apex::{validate_variables, ApexConfig, VariableSpec};
use crate::hydra::CampaignSettings;
use crate::raven::MonitorPolicy;
use crate::riskcore::FailureMode;
use crate::simengine::TrafficProfile;
use crate::topology::{
    validate_topology, ComponentId, ComponentSpec, DependencyEdge, TopologyError, TopologyGraph,
    ValidatedTopology,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Decision variables plus search settings for the optimizer.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub variables: Vec<VariableSpec>,
    #[serde(default)]
    pub settings: ApexConfig,
}

fn default_duration() -> u64 {
    300
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub components: Vec<ComponentSpec>,
    pub edges: Vec<DependencyEdge>,
    pub entries: Vec<ComponentId>,
    pub traffic: TrafficProfile,
    #[serde(default)]
    pub seed: u64,
    /// Default run length for simulation and monitoring, in ticks.
    #[serde(default = "default_duration")]
    pub duration_s: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failure_modes: Vec<FailureMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<CampaignSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<MonitorPolicy>,
}

impl Scenario {
    pub fn topology_graph(&self) -> TopologyGraph {
        TopologyGraph {
            components: self.components.clone(),
            edges: self.edges.clone(),
            entries: self.entries.clone(),
        }
    }
}

/// A parsed and validated scenario, pinned to the bytes it came from.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub topology: ValidatedTopology,
    /// Hex SHA-256 of the raw scenario bytes.
    pub sha256: String,
}

pub fn scenario_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parse, structurally validate, and hash a scenario document.
pub fn load_scenario(bytes: &[u8]) -> Result<LoadedScenario, ScenarioError> {
    let sha256 = scenario_hash(bytes);
    let scenario: Scenario = serde_json::from_slice(bytes)?;
    let topology = validate_topology(scenario.topology_graph())?;

    scenario
        .traffic
        .validate()
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    if scenario.duration_s == 0 {
        return Err(ScenarioError::Invalid("duration_s must be >= 1".into()));
    }
    for fm in &scenario.failure_modes {
        if topology.component_index(&fm.component).is_err() {
            return Err(ScenarioError::Invalid(format!(
                "failure mode `{}` references unknown component `{}`",
                fm.id, fm.component
            )));
        }
        if !(0.0..=1.0).contains(&fm.detection_probability) {
            return Err(ScenarioError::Invalid(format!(
                "failure mode `{}`: detection_probability must be in [0, 1]",
                fm.id
            )));
        }
    }
    if let Some(campaign) = &scenario.campaign {
        if campaign.strategies.is_empty() {
            return Err(ScenarioError::Invalid(
                "campaign.strategies must not be empty".into(),
            ));
        }
        if !(campaign.max_risk_threshold.is_finite() && campaign.max_risk_threshold > 0.0) {
            return Err(ScenarioError::Invalid(
                "campaign.max_risk_threshold must be > 0".into(),
            ));
        }
        if campaign.amp_window_s == 0 {
            return Err(ScenarioError::Invalid(
                "campaign.amp_window_s must be >= 1".into(),
            ));
        }
    }
    if let Some(opt) = &scenario.optimizer {
        validate_variables(&topology, &opt.variables)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if opt.variables.is_empty() {
            return Err(ScenarioError::Invalid(
                "optimizer.variables must not be empty".into(),
            ));
        }
    }
    if let Some(monitor) = &scenario.monitor {
        monitor
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if scenario.optimizer.is_none() {
            return Err(ScenarioError::Invalid(
                "monitor requires an optimizer section (it needs decision variables)".into(),
            ));
        }
    }

    Ok(LoadedScenario {
        scenario,
        topology,
        sha256,
    })
}
