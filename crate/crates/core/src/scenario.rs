//! Scenario files.
//!
//! A scenario is a TOML document describing the acceptor group, the
//! replicated state machine, the simulated application, the client request
//! trace, the fault schedule, the network and the timing parameters. See
//! the README for the full format.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::AnomalyPolicy;
use crate::messages::ClientRequest;
use crate::simnet::{FaultKind, FaultSpec, NetConfig, Time};
use crate::statemachine::{compile, AppConfig, AppModel, AppModelError, MachineConfig, MachineError, StateMachineDef};

pub const DEFAULT_HORIZON: Time = 100_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    #[serde(default = "Timing::default_heartbeat")]
    pub heartbeat_interval: Time,
    #[serde(default = "Timing::default_suspect")]
    pub suspect_after: Time,
    #[serde(default = "Timing::default_prepare")]
    pub prepare_timeout: Time,
    #[serde(default = "Timing::default_deadline")]
    pub instance_deadline: Time,
}

impl Timing {
    fn default_heartbeat() -> Time {
        5
    }
    fn default_suspect() -> Time {
        15
    }
    fn default_prepare() -> Time {
        10
    }
    fn default_deadline() -> Time {
        50
    }
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            heartbeat_interval: Self::default_heartbeat(),
            suspect_after: Self::default_suspect(),
            prepare_timeout: Self::default_prepare(),
            instance_deadline: Self::default_deadline(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub at: Time,
    pub payload: String,
}

/// The scenario exactly as written in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub acceptors: u32,
    #[serde(default)]
    pub anomaly_policy: AnomalyPolicy,
    #[serde(default = "default_horizon")]
    pub horizon: Time,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub net: NetConfig,
    pub machine: MachineConfig,
    pub app: AppConfig,
    #[serde(default)]
    pub requests: Vec<RequestSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

fn default_horizon() -> Time {
    DEFAULT_HORIZON
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// The offending field for validation errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ScenarioError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// A validated scenario with its machine and application compiled.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub machine: StateMachineDef,
    pub app: AppModel,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        validate(&config)?;
        let machine = compile(&config.machine).map_err(|e| {
            let field = match &e {
                MachineError::UnknownState { rule, .. }
                | MachineError::BadRegex { rule, .. }
                | MachineError::StarNotSelfLoop { rule, .. } => format!("machine.rules[{rule}]"),
                MachineError::NoStartState => "machine.start".to_string(),
                MachineError::DuplicateState(_) => "machine.states".to_string(),
            };
            ScenarioError::invalid(field, e.to_string())
        })?;
        let app = AppModel::from_config(&config.app).map_err(|e| {
            let index = match &e {
                AppModelError::AmbiguousEntry(i) => *i,
                AppModelError::BadPattern { index, .. } => *index,
            };
            ScenarioError::invalid(format!("app.outputs[{index}]"), e.to_string())
        })?;
        Ok(Self { config, machine, app })
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e
                .span()
                .map_or(1, |span| 1 + text[..span.start.min(text.len())].matches('\n').count()),
            message: e.message().to_string(),
        })?;
        Self::from_config(config)
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn seed(&self) -> u64 {
        self.config.net.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.net.seed = seed;
        self
    }

    /// The request trace with ids assigned in file order.
    pub fn requests(&self) -> Vec<ClientRequest> {
        self.config
            .requests
            .iter()
            .enumerate()
            .map(|(i, r)| ClientRequest::new(i as u64, r.payload.clone()))
            .collect()
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::parse(&text)
}

fn validate(c: &ScenarioConfig) -> Result<(), ScenarioError> {
    if c.acceptors == 0 {
        return Err(ScenarioError::invalid("acceptors", "need at least one acceptor"));
    }
    for (name, value) in [
        ("timing.heartbeat_interval", c.timing.heartbeat_interval),
        ("timing.suspect_after", c.timing.suspect_after),
        ("timing.prepare_timeout", c.timing.prepare_timeout),
        ("timing.instance_deadline", c.timing.instance_deadline),
    ] {
        if value == 0 {
            return Err(ScenarioError::invalid(name, "must be positive"));
        }
    }
    if !(0.0..=1.0).contains(&c.net.loss_rate) {
        return Err(ScenarioError::invalid("net.loss_rate", "must lie in [0, 1]"));
    }
    for (i, link) in c.net.links.iter().enumerate() {
        if link.between.iter().any(|&n| n >= c.acceptors) {
            return Err(ScenarioError::invalid(
                format!("net.links[{i}].between"),
                format!("nodes must be below {}", c.acceptors),
            ));
        }
    }
    for (i, pair) in c.requests.windows(2).enumerate() {
        if pair[1].at < pair[0].at {
            return Err(ScenarioError::invalid(
                format!("requests[{}].at", i + 1),
                "arrival times must be nondecreasing",
            ));
        }
    }
    for (i, f) in c.faults.iter().enumerate() {
        if f.target.0 >= c.acceptors {
            return Err(ScenarioError::invalid(
                format!("faults[{i}].target"),
                format!("node {} does not exist (acceptors = {})", f.target, c.acceptors),
            ));
        }
        if let FaultKind::Compromise { overrides } = &f.kind {
            if overrides.is_empty() {
                return Err(ScenarioError::invalid(
                    format!("faults[{i}].overrides"),
                    "a compromise needs at least one override",
                ));
            }
        }
    }
    Ok(())
}
