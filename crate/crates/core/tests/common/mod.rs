//! Seeded scenario generators and a single-replica oracle shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use paxsim::learner::AnomalyPolicy;
use paxsim::messages::NodeId;
use paxsim::scenario::{RequestSpec, Scenario, ScenarioConfig, Timing, DEFAULT_HORIZON};
use paxsim::simnet::{FaultKind, FaultSpec, NetConfig};
use paxsim::statemachine::{
    apply, execute, AppConfig, MachineConfig, OutputEntry, RuleConfig, StateMachineDef, Threshold,
};
use paxsim::messages::ClientRequest;

pub const PAYLOADS: [&str; 5] = ["GET /a", "GET /b", "POST /c", "fail", "retry"];
pub const OUTPUTS: [&str; 4] = ["OK", "Error", "Failure", "Created"];
const OUTPUT_PATTERNS: [&str; 5] = ["OK", "Error", "Error|Failure", "Created|OK", ".*"];
const INPUT_PATTERNS: [Option<&str>; 3] = [None, Some("GET .*"), Some("fail")];

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn bundled(name: &str) -> Scenario {
    paxsim::load_scenario(scenario_dir().join(format!("{name}.scenario"))).expect("bundled scenario loads")
}

pub fn bundled_names() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            let stem = p.file_stem()?.to_string_lossy().into_owned();
            (p.extension()? == "scenario").then_some(stem)
        })
        .collect();
    names.sort();
    names
}

pub fn random_machine(rng: &mut ChaCha8Rng) -> MachineConfig {
    let states: Vec<String> = (0..rng.gen_range(2..=4)).map(|i| format!("S{i}")).collect();
    let rules = (0..rng.gen_range(1..=5))
        .map(|_| {
            let from = states.choose(rng).unwrap().clone();
            let star = rng.gen_bool(0.15);
            let to = if star { from.clone() } else { states.choose(rng).unwrap().clone() };
            RuleConfig {
                from,
                to,
                output: OUTPUT_PATTERNS.choose(rng).unwrap().to_string(),
                input: INPUT_PATTERNS.choose(rng).unwrap().map(str::to_string),
                threshold: if star {
                    Threshold::Star
                } else {
                    Threshold::Count(rng.gen_range(0..=3))
                },
            }
        })
        .collect();
    MachineConfig {
        start: Some(states[0].clone()),
        states,
        rules,
    }
}

pub fn random_app(rng: &mut ChaCha8Rng) -> AppConfig {
    let mut outputs = Vec::new();
    for p in PAYLOADS {
        if rng.gen_bool(0.6) {
            outputs.push(OutputEntry {
                payload: Some(p.to_string()),
                pattern: None,
                output: OUTPUTS.choose(rng).unwrap().to_string(),
            });
        }
    }
    AppConfig {
        outputs,
        default_output: "OK".into(),
    }
}

pub fn random_requests(rng: &mut ChaCha8Rng, count: usize) -> Vec<RequestSpec> {
    let mut at = 1;
    (0..count)
        .map(|_| {
            at += rng.gen_range(0..=15);
            RequestSpec {
                at,
                payload: PAYLOADS.choose(rng).unwrap().to_string(),
            }
        })
        .collect()
}

fn base_config(name: String, rng: &mut ChaCha8Rng, acceptors: u32, requests: usize) -> ScenarioConfig {
    ScenarioConfig {
        name,
        acceptors,
        anomaly_policy: AnomalyPolicy::Strict,
        horizon: DEFAULT_HORIZON,
        timing: Timing::default(),
        net: NetConfig {
            seed: rng.gen(),
            base_delay: rng.gen_range(1..=3),
            jitter: rng.gen_range(0..=3),
            loss_rate: 0.0,
            links: Vec::new(),
        },
        machine: random_machine(rng),
        app: random_app(rng),
        requests: random_requests(rng, requests),
        faults: Vec::new(),
    }
}

/// 3 to 9 honest acceptors, 1 to 10 requests, loss up to 0.2 and up to two
/// crashes that always leave a majority alive.
pub fn honest_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let acceptors = rng.gen_range(3..=9);
    let requests = rng.gen_range(1..=10);
    let mut config = base_config(format!("honest-{seed}"), &mut rng, acceptors, requests);
    config.net.loss_rate = rng.gen_range(0.0..=0.2);
    let max_crashes = 2.min((acceptors as usize - 1) / 2);
    let mut targets: Vec<u32> = (0..acceptors).collect();
    targets.shuffle(&mut rng);
    for &target in targets.iter().take(rng.gen_range(0..=max_crashes)) {
        config.faults.push(FaultSpec {
            at: rng.gen_range(0..=60),
            target: NodeId(target),
            kind: FaultKind::Crash,
        });
    }
    Scenario::from_config(config).expect("generated scenario is valid")
}

/// A lossless scenario with one compromised acceptor whose forced output
/// changes the active transition on at least one request. Returns the
/// scenario and the compromised node.
pub fn compromised_scenario(seed: u64) -> (Scenario, NodeId) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let acceptors = rng.gen_range(3..=9);
        let requests = rng.gen_range(1..=10);
        let mut config = base_config(format!("compromised-{seed}"), &mut rng, acceptors, requests);
        let honest = Scenario::from_config(config.clone()).expect("generated scenario is valid");
        let trace = honest.requests();
        let j = rng.gen_range(0..trace.len());
        let before = oracle_states(&honest.machine, &honest, j);
        let payload = &trace[j].payload;
        let honest_out = execute(&honest.app, &trace[j]);
        let honest_rule = honest.machine.active_rule(&before.current, payload, &honest_out);
        let forced: Vec<&str> = OUTPUTS
            .iter()
            .copied()
            .filter(|o| *o != honest_out && honest.machine.active_rule(&before.current, payload, o) != honest_rule)
            .collect();
        let Some(forced) = forced.choose(&mut rng) else {
            continue;
        };
        let target = NodeId(rng.gen_range(0..acceptors));
        config.faults.push(FaultSpec {
            at: rng.gen_range(0..=config.requests[j].at),
            target,
            kind: FaultKind::Compromise {
                overrides: BTreeMap::from([(payload.clone(), forced.to_string())]),
            },
        });
        return (Scenario::from_config(config).expect("generated scenario is valid"), target);
    }
}

/// The machine state of a single honest replica after executing the first
/// `upto` requests.
pub fn oracle_states(def: &StateMachineDef, scenario: &Scenario, upto: usize) -> paxsim::statemachine::RuntimeState {
    let mut rs = def.initial();
    for r in scenario.requests().iter().take(upto) {
        rs = apply(def, &rs, &r.payload, &execute(&scenario.app, r));
    }
    rs
}

/// `(output, state)` per request for one honest replica run alone.
pub fn oracle(scenario: &Scenario) -> Vec<(String, String)> {
    let mut rs = scenario.machine.initial();
    scenario
        .requests()
        .iter()
        .map(|r: &ClientRequest| {
            let out = execute(&scenario.app, r);
            rs = apply(&scenario.machine, &rs, &r.payload, &out);
            (out, rs.current.clone())
        })
        .collect()
}
