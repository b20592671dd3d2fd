//! The replicated state machine.
//!
//! A machine is a set of named states and an ordered list of transition
//! rules. Each rule fires on `(input, output)` pairs that fully match its two
//! regexes. A rule with threshold `k` has to match `k` consecutive times
//! before the next match moves the replica to the target state; a `*` rule
//! matches forever without leaving its state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messages::ClientRequest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Threshold {
    Count(u32),
    Star,
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Threshold::Count(k) => s.serialize_u32(*k),
            Threshold::Star => s.serialize_str("*"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(k) => Ok(Threshold::Count(k)),
            Raw::Text(t) if t == "*" => Ok(Threshold::Star),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "threshold must be an integer or \"*\", got {t:?}"
            ))),
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Count(k) => write!(f, "{k}"),
            Threshold::Star => f.write_str("*"),
        }
    }
}

/// One rule as written in a scenario file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub from: String,
    pub to: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    pub threshold: Threshold,
}

/// The `[machine]` section of a scenario file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineConfig {
    pub states: Vec<String>,
    #[serde(default)]
    pub start: Option<String>,
    #[serde(default)]
    pub rules: Vec<RuleConfig>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MachineError {
    #[error("rule {rule} references undeclared state {state:?}")]
    UnknownState { rule: usize, state: String },
    #[error("rule {rule}: bad regex {pattern:?}: {reason}")]
    BadRegex {
        rule: usize,
        pattern: String,
        reason: String,
    },
    #[error("no start state declared, or start state is not among the states")]
    NoStartState,
    #[error("rule {rule} has threshold * but {from:?} != {to:?}")]
    StarNotSelfLoop { rule: usize, from: String, to: String },
    #[error("state {0:?} declared twice")]
    DuplicateState(String),
}

#[derive(Clone, Debug)]
pub struct TransitionRule {
    pub from: String,
    pub to: String,
    pub input: Regex,
    pub output: Regex,
    pub threshold: Threshold,
}

impl TransitionRule {
    fn matches(&self, input: &str, output: &str) -> bool {
        self.input.is_match(input) && self.output.is_match(output)
    }
}

#[derive(Clone, Debug)]
pub struct StateMachineDef {
    pub states: Vec<String>,
    pub start: String,
    pub rules: Vec<TransitionRule>,
}

/// Compiles a pattern so that it only matches the whole text.
fn full_match(rule: usize, pattern: &str) -> Result<Regex, MachineError> {
    Regex::new(&format!("^(?:{pattern})$")).map_err(|e| MachineError::BadRegex {
        rule,
        pattern: pattern.to_string(),
        reason: e.to_string(),
    })
}

pub fn compile(config: &MachineConfig) -> Result<StateMachineDef, MachineError> {
    let mut declared = BTreeSet::new();
    for s in &config.states {
        if !declared.insert(s.as_str()) {
            return Err(MachineError::DuplicateState(s.clone()));
        }
    }
    let start = match &config.start {
        Some(s) if declared.contains(s.as_str()) => s.clone(),
        _ => return Err(MachineError::NoStartState),
    };

    let mut rules = Vec::with_capacity(config.rules.len());
    for (i, rule) in config.rules.iter().enumerate() {
        for state in [&rule.from, &rule.to] {
            if !declared.contains(state.as_str()) {
                return Err(MachineError::UnknownState {
                    rule: i,
                    state: state.clone(),
                });
            }
        }
        if rule.threshold == Threshold::Star && rule.from != rule.to {
            return Err(MachineError::StarNotSelfLoop {
                rule: i,
                from: rule.from.clone(),
                to: rule.to.clone(),
            });
        }
        rules.push(TransitionRule {
            from: rule.from.clone(),
            to: rule.to.clone(),
            input: full_match(i, rule.input.as_deref().unwrap_or(".*"))?,
            output: full_match(i, &rule.output)?,
            threshold: rule.threshold,
        });
    }

    Ok(StateMachineDef {
        states: config.states.clone(),
        start,
        rules,
    })
}

/// Per-replica position in the machine. `counters` holds consecutive-match
/// counts keyed by rule index, only for rules leaving `current`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RuntimeState {
    pub current: String,
    pub counters: BTreeMap<usize, u32>,
}

impl RuntimeState {
    pub fn start(def: &StateMachineDef) -> Self {
        Self {
            current: def.start.clone(),
            counters: BTreeMap::new(),
        }
    }
}

impl StateMachineDef {
    pub fn initial(&self) -> RuntimeState {
        RuntimeState::start(self)
    }

    /// Index of the first rule out of `state` matching `(input, output)`.
    pub fn active_rule(&self, state: &str, input: &str, output: &str) -> Option<usize> {
        self.rules
            .iter()
            .position(|r| r.from == state && r.matches(input, output))
    }
}

/// Steps the machine on one executed request.
pub fn apply(def: &StateMachineDef, rs: &RuntimeState, input: &str, output: &str) -> RuntimeState {
    let Some(idx) = def.active_rule(&rs.current, input, output) else {
        return RuntimeState {
            current: rs.current.clone(),
            counters: BTreeMap::new(),
        };
    };
    let rule = &def.rules[idx];
    match rule.threshold {
        Threshold::Star => rs.clone(),
        Threshold::Count(k) => {
            let seen = rs.counters.get(&idx).copied().unwrap_or(0);
            if seen < k {
                RuntimeState {
                    current: rs.current.clone(),
                    counters: BTreeMap::from([(idx, seen + 1)]),
                }
            } else {
                RuntimeState {
                    current: rule.to.clone(),
                    counters: BTreeMap::new(),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputEntry {
    /// Exact payload to match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    /// Regex the whole payload must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub output: String,
}

/// The `[app]` section of a scenario file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub outputs: Vec<OutputEntry>,
    pub default_output: String,
}

#[derive(Clone, Debug)]
enum PayloadMatcher {
    Exact(String),
    Pattern(Regex),
}

impl PayloadMatcher {
    fn matches(&self, payload: &str) -> bool {
        match self {
            PayloadMatcher::Exact(p) => p == payload,
            PayloadMatcher::Pattern(re) => re.is_match(payload),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AppModelError {
    #[error("outputs[{0}] must set exactly one of `payload` or `pattern`")]
    AmbiguousEntry(usize),
    #[error("outputs[{index}]: bad regex {pattern:?}")]
    BadPattern { index: usize, pattern: String },
}

/// The simulated application: a deterministic payload → output table.
#[derive(Clone, Debug)]
pub struct AppModel {
    entries: Vec<(PayloadMatcher, String)>,
    default_output: String,
}

impl AppModel {
    pub fn new(default_output: impl Into<String>) -> Self {
        Self {
            entries: Vec::new(),
            default_output: default_output.into(),
        }
    }

    pub fn with_exact(mut self, payload: impl Into<String>, output: impl Into<String>) -> Self {
        self.entries
            .push((PayloadMatcher::Exact(payload.into()), output.into()));
        self
    }

    pub fn with_pattern(mut self, pattern: &str, output: impl Into<String>) -> Result<Self, regex::Error> {
        let re = Regex::new(&format!("^(?:{pattern})$"))?;
        self.entries.push((PayloadMatcher::Pattern(re), output.into()));
        Ok(self)
    }

    pub fn from_config(config: &AppConfig) -> Result<Self, AppModelError> {
        let mut model = AppModel::new(config.default_output.clone());
        for (i, entry) in config.outputs.iter().enumerate() {
            model = match (&entry.payload, &entry.pattern) {
                (Some(p), None) => model.with_exact(p.clone(), entry.output.clone()),
                (None, Some(pat)) => model
                    .with_pattern(pat, entry.output.clone())
                    .map_err(|_| AppModelError::BadPattern {
                        index: i,
                        pattern: pat.clone(),
                    })?,
                _ => return Err(AppModelError::AmbiguousEntry(i)),
            };
        }
        Ok(model)
    }

    pub fn default_output(&self) -> &str {
        &self.default_output
    }
}

/// Runs the application on one request: first matching entry wins.
pub fn execute(model: &AppModel, request: &ClientRequest) -> String {
    model
        .entries
        .iter()
        .find(|(m, _)| m.matches(&request.payload))
        .map_or_else(|| model.default_output.clone(), |(_, out)| out.clone())
}
