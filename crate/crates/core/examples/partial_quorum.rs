//! A crashed acceptor and two slow links: the leader's first prepare times
//! out, the crash is detected, and the retry wins with three promises out
//! of a five-member group.

use std::path::PathBuf;

use paxsim::eventlog::Entry;
use paxsim::{load_scenario, run};

fn main() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/section5.scenario");
    let outcome = run(load_scenario(&path).expect("bundled fixture"));

    for record in outcome.log.records() {
        if matches!(
            record.entry,
            Entry::Crash { .. }
                | Entry::Propose { .. }
                | Entry::Repropose { .. }
                | Entry::Failure { .. }
                | Entry::MembershipChange { .. }
                | Entry::MajorityReached { .. }
                | Entry::Verdict { .. }
        ) {
            println!("{record}");
        }
    }
}
