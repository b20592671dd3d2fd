//! Running scenarios end to end and summarising the outcome.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::eventlog::EventLog;
use crate::learner::{AnomalyPolicy, Verdict};
use crate::messages::NodeId;
use crate::scenario::Scenario;
use crate::sim::Simulation;
use crate::simnet::Time;

/// Process exit status for the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Invalid = 1,
    AnomalyDetected = 2,
    Livelock = 3,
}

impl Status {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RequestVerdict {
    pub request_id: u64,
    pub payload: String,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub consensus: u64,
    pub anomaly: u64,
    pub inconclusive: u64,
    pub reproposals: u64,
    pub elections: u64,
    pub drops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AnomalyDetail {
    pub instance: u64,
    pub agreeing: BTreeSet<NodeId>,
    pub dissenting: BTreeSet<NodeId>,
    pub states_seen: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub acceptors: u32,
    pub policy: AnomalyPolicy,
    pub verdicts: Vec<RequestVerdict>,
    pub counts: Counts,
    pub membership: BTreeSet<NodeId>,
    pub leader: NodeId,
    pub epoch: u64,
    /// Every divergence the learner saw, including ones outvoted under the
    /// majority policy.
    pub anomalies: Vec<AnomalyDetail>,
    pub horizon_reached: bool,
    pub livelock: bool,
    pub halted: Option<String>,
    pub end_time: Time,
}

impl Report {
    /// Summarises a finished simulation.
    pub fn from_simulation(sim: &Simulation) -> Self {
        let cfg = &sim.scenario().config;
        let verdicts: Vec<RequestVerdict> = sim
            .requests()
            .iter()
            .map(|r| RequestVerdict {
                request_id: r.request_id,
                payload: r.payload.clone(),
                verdict: sim.verdicts().get(&r.request_id).cloned().unwrap_or(Verdict::Inconclusive {
                    received: 0,
                    needed: 0,
                }),
            })
            .collect();
        let count = |name: &str| verdicts.iter().filter(|v| v.verdict.name() == name).count() as u64;
        let counts = Counts {
            consensus: count("Consensus"),
            anomaly: count("Anomaly"),
            inconclusive: count("Inconclusive"),
            reproposals: sim.counters().reproposals,
            elections: sim.counters().elections,
            drops: sim.drops(),
        };
        let view = sim.view();
        Self {
            scenario: cfg.name.clone(),
            seed: cfg.net.seed,
            acceptors: cfg.acceptors,
            policy: cfg.anomaly_policy,
            verdicts,
            counts,
            membership: view.alive.clone(),
            leader: view.leader,
            epoch: view.epoch,
            anomalies: sim
                .anomalies()
                .iter()
                .map(|(instance, d)| AnomalyDetail {
                    instance: *instance,
                    agreeing: d.agreeing.clone(),
                    dissenting: d.dissenting.clone(),
                    states_seen: d.states_seen.clone(),
                })
                .collect(),
            horizon_reached: sim.horizon_reached(),
            livelock: sim.livelocked(),
            halted: sim.halted().map(str::to_string),
            end_time: sim.now(),
        }
    }

    pub fn status(&self) -> Status {
        if !self.anomalies.is_empty() {
            Status::AnomalyDetected
        } else if self.livelock {
            Status::Livelock
        } else {
            Status::Ok
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn ids(set: &BTreeSet<NodeId>) -> String {
    set.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "scenario {} (seed {}, {} acceptors, {} policy)",
            self.scenario,
            self.seed,
            self.acceptors,
            self.policy.as_str()
        )?;
        for v in &self.verdicts {
            let mut line = format!("  request {:>3} {:<14}", v.request_id, v.verdict.name());
            match &v.verdict {
                Verdict::Consensus { output, state } => {
                    let _ = write!(line, " output={output} state={state}");
                }
                Verdict::Anomaly(d) => {
                    let _ = write!(line, " dissenting={}", ids(&d.dissenting));
                }
                Verdict::Inconclusive { received, needed } => {
                    let _ = write!(line, " received={received} needed={needed}");
                }
            }
            writeln!(f, "{}  payload={:?}", line.trim_end(), v.payload)?;
        }
        let c = &self.counts;
        writeln!(
            f,
            "counts: consensus={} anomaly={} inconclusive={} reproposals={} elections={} drops={}",
            c.consensus, c.anomaly, c.inconclusive, c.reproposals, c.elections, c.drops
        )?;
        writeln!(
            f,
            "membership: {{{}}} leader={} epoch={}",
            ids(&self.membership),
            self.leader,
            self.epoch
        )?;
        for a in &self.anomalies {
            let states: Vec<String> = a.states_seen.iter().map(|(s, n)| format!("{s}:{n}")).collect();
            writeln!(
                f,
                "anomaly: instance={} agreeing={{{}}} dissenting={{{}}} states={}",
                a.instance,
                ids(&a.agreeing),
                ids(&a.dissenting),
                states.join(",")
            )?;
        }
        if let Some(reason) = &self.halted {
            writeln!(f, "halted: {reason}")?;
        }
        write!(
            f,
            "end: t={}{}",
            self.end_time,
            if self.livelock { " (livelock: horizon reached)" } else { "" }
        )
    }
}

/// A finished run: its report and the full event log.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub log: EventLog,
}

pub fn run(scenario: Scenario) -> RunOutcome {
    let mut sim = Simulation::new(scenario);
    sim.run();
    let report = Report::from_simulation(&sim);
    RunOutcome {
        report,
        log: sim.into_log(),
    }
}
