//! Write a run's event log to text, read it back, re-derive every verdict
//! from it, and audit the protocol invariants.

use std::path::PathBuf;

use paxsim::audit::{audit_log, check_report};
use paxsim::eventlog::parse_log;
use paxsim::replay::replay;
use paxsim::{load_scenario, run};

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/election.scenario");
    let scenario = load_scenario(&path).expect("bundled fixture").with_seed(2024);
    let net = scenario.config.net.clone();
    let outcome = run(scenario);

    let text = outcome.log.render();
    println!("log: {} lines, first: {}", text.lines().count(), text.lines().next().unwrap_or(""));

    let records = parse_log(&text).expect("log parses back");
    assert_eq!(records, outcome.log.records());

    let replayed = replay(&records).expect("log starts with Start");
    println!("replay: {} verdicts, {} mismatches", replayed.verdicts.len(), replayed.mismatches.len());

    let violations = audit_log(&records, &net);
    let report_issues = check_report(&outcome.report, &records);
    println!("audit: {} violations, {} report mismatches", violations.len(), report_issues.len());
    for v in violations.iter().chain(&report_issues) {
        println!("  {v}");
    }

    // identical scenario and seed reproduce the log byte for byte
    let again = run(load_scenario(&path).unwrap().with_seed(2024));
    println!("deterministic: {}", again.log.render() == text);
}
