//! Five honest replicas agree on every request.
//!
//! `cargo run --example basic_consensus [seed]`

use std::path::PathBuf;

use paxsim::{load_scenario, run};

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/baseline.scenario");
    let mut scenario = load_scenario(&path).expect("bundled fixture");
    if let Some(seed) = std::env::args().nth(1) {
        scenario = scenario.with_seed(seed.parse().expect("seed is an integer"));
    }
    let outcome = run(scenario);
    println!("{}", outcome.report);
    println!("exit status {}", outcome.report.status().code());
}
