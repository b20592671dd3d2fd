//! The threshold machine on its own, then inside a replicated run.
//!
//! Six failures keep the machine in state 3; the seventh moves it to 7.

use std::path::PathBuf;

use paxsim::learner::Verdict;
use paxsim::statemachine::apply;
use paxsim::{load_scenario, run};

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/fig3.scenario");
    let scenario = load_scenario(&path).expect("bundled fixture");

    println!("single replica:");
    let def = &scenario.machine;
    let mut state = def.initial();
    for step in 1..=7 {
        state = apply(def, &state, "fail", "Error");
        println!("  error #{step}: state {} counters {:?}", state.current, state.counters);
    }

    println!("replicated:");
    let outcome = run(scenario);
    for v in &outcome.report.verdicts {
        match &v.verdict {
            Verdict::Consensus { output, state } => {
                println!("  request {}: all replicas report ({output}, {state})", v.request_id)
            }
            other => println!("  request {}: {}", v.request_id, other.name()),
        }
    }
}
