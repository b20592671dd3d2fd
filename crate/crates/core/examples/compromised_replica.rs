//! A compromised replica is named as the dissenter under both policies.

use std::path::PathBuf;

use paxsim::learner::AnomalyPolicy;
use paxsim::{load_scenario, run, Scenario};

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/compromised.scenario");
    let base = load_scenario(&path).expect("bundled fixture");

    for policy in [AnomalyPolicy::Strict, AnomalyPolicy::Majority] {
        let mut config = base.config.clone();
        config.anomaly_policy = policy;
        let report = run(Scenario::from_config(config).expect("still valid")).report;

        println!("policy {}:", policy.as_str());
        for v in &report.verdicts {
            println!("  request {} {:?}: {}", v.request_id, v.payload, v.verdict.name());
        }
        for a in &report.anomalies {
            println!(
                "  instance {}: agreeing {:?}, dissenting {:?}, states {:?}",
                a.instance, a.agreeing, a.dissenting, a.states_seen
            );
        }
        println!("  exit status {}", report.status().code());
    }
}
