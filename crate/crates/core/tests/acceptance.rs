//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;

use paxsim::audit::check_proposal_numbers;
use paxsim::eventlog::{Entry, Record};
use paxsim::learner::{decide, Divergence, InstanceLedger, Tuple, Verdict};
use paxsim::messages::{Address, NodeId, Packet, ProposalNumber};
use paxsim::simnet::{FaultKind, FaultSpec};
use paxsim::{run, Scenario};

use common::{bundled, bundled_names, compromised_scenario, honest_scenario, oracle};

/// Proposal-number violations collected from every log produced by
/// criteria 1 to 5.
#[derive(Default)]
struct NumberAudit {
    logs: usize,
    violations: Vec<String>,
}

impl NumberAudit {
    fn scan(&mut self, name: &str, records: &[Record]) {
        self.logs += 1;
        self.violations
            .extend(check_proposal_numbers(records).into_iter().map(|v| format!("{name}: {v}")));
    }
}

type Outcome = Result<String, String>;

fn safety(audit: &mut NumberAudit) -> Outcome {
    let (mut matched, mut inconclusive) = (0, 0);
    for seed in 0..1000 {
        let scenario = honest_scenario(seed);
        let expected = oracle(&scenario);
        let out = run(scenario);
        audit.scan(&format!("honest-{seed}"), out.log.records());
        for v in &out.report.verdicts {
            match &v.verdict {
                Verdict::Anomaly(d) => {
                    return Err(format!("seed {seed}: anomaly on request {} ({:?})", v.request_id, d.dissenting))
                }
                Verdict::Consensus { output, state } => {
                    let (o, s) = &expected[v.request_id as usize];
                    if (o, s) != (output, state) {
                        return Err(format!(
                            "seed {seed}: request {} decided ({output}, {state}), oracle says ({o}, {s})",
                            v.request_id
                        ));
                    }
                    matched += 1;
                }
                Verdict::Inconclusive { .. } => inconclusive += 1,
            }
        }
    }
    Ok(format!(
        "1000 scenarios, 0 anomalies, {matched} consensus verdicts equal to the oracle, {inconclusive} inconclusive"
    ))
}

fn detection() -> Outcome {
    for seed in 0..500 {
        let (scenario, target) = compromised_scenario(10_000 + seed);
        let out = run(scenario);
        let caught = out.report.verdicts.iter().any(|v| match &v.verdict {
            Verdict::Anomaly(d) => d.dissenting.contains(&target),
            _ => false,
        });
        if !caught {
            return Err(format!("seed {}: node {target} went undetected", 10_000 + seed));
        }
    }
    Ok("500 of 500 compromised replicas named as dissenting".into())
}

fn position(records: &[Record], pred: impl Fn(&Entry) -> bool) -> Option<usize> {
    records.iter().position(|r| pred(&r.entry))
}

fn partial_quorum(audit: &mut NumberAudit) -> Outcome {
    let out = run(bundled("section5"));
    let records = out.log.records();
    audit.scan("section5", records);
    let failures: Vec<_> = records
        .iter()
        .filter(|r| matches!(r.entry, Entry::Failure { .. }))
        .collect();
    if failures.len() != 1 || !matches!(failures[0].entry, Entry::Failure { node: NodeId(5) }) {
        return Err(format!("expected one Failure node=5, found {}", failures.len()));
    }
    let repropose = position(records, |e| matches!(e, Entry::Repropose { .. })).ok_or("no Repropose")?;
    let failure = position(records, |e| matches!(e, Entry::Failure { .. })).unwrap();
    let first_majority = position(records, |e| matches!(e, Entry::MajorityReached { .. })).ok_or("no MajorityReached")?;
    let (promises, membership) = match &records[first_majority].entry {
        Entry::MajorityReached {
            promises, membership, ..
        } => (*promises, *membership),
        _ => unreachable!(),
    };
    if !(repropose < failure && failure < first_majority) {
        return Err(format!(
            "order is Repropose@{repropose} Failure@{failure} MajorityReached@{first_majority}"
        ));
    }
    if (promises, membership) != (3, 5) {
        return Err(format!("MajorityReached with {promises} of {membership}"));
    }
    Ok(format!(
        "Repropose (seq {}) < Failure node=5 (seq {}) < MajorityReached 3 of 5 (seq {})",
        records[repropose].seq, records[failure].seq, records[first_majority].seq
    ))
}

fn threshold_machine(audit: &mut NumberAudit) -> Outcome {
    let out = run(bundled("fig3"));
    audit.scan("fig3", out.log.records());
    let expected: Vec<(String, String)> = (0..7)
        .map(|i| ("Error".to_string(), if i < 6 { "3" } else { "7" }.to_string()))
        .collect();
    let decided: Vec<(String, String)> = out
        .report
        .verdicts
        .iter()
        .map(|v| match &v.verdict {
            Verdict::Consensus { output, state } => (output.clone(), state.clone()),
            other => (other.name().to_string(), String::new()),
        })
        .collect();
    if decided != expected {
        return Err(format!("verdicts {decided:?}"));
    }
    // Every replica's own report, not only the learner's conclusion.
    let mut per_node: BTreeMap<NodeId, BTreeMap<u64, (String, String)>> = BTreeMap::new();
    for r in out.log.records() {
        if let Entry::Packet {
            to: Address::Learner,
            packet:
                Packet::Accepted {
                    request_id,
                    output,
                    new_state,
                    from,
                    ..
                },
            ..
        } = &r.entry
        {
            per_node
                .entry(*from)
                .or_default()
                .insert(*request_id, (output.clone(), new_state.clone()));
        }
    }
    for (node, reports) in &per_node {
        let seen: Vec<_> = reports.values().cloned().collect();
        if seen != expected {
            return Err(format!("node {node} reported {seen:?}"));
        }
    }
    Ok(format!(
        "{} replicas: six Error outputs stay in 3, the seventh moves to 7",
        per_node.len()
    ))
}

fn election_variant(seed: u64) -> Scenario {
    let mut config = bundled("election").config;
    config.net.seed = seed;
    config.faults = vec![FaultSpec {
        at: 3 + seed % 30,
        target: NodeId(0),
        kind: FaultKind::Crash,
    }];
    Scenario::from_config(config).unwrap()
}

fn election(audit: &mut NumberAudit) -> Outcome {
    let mut elections = 0;
    for seed in 0..100 {
        let out = run(election_variant(seed));
        let records = out.log.records();
        audit.scan(&format!("election-{seed}"), records);
        let mut alive: BTreeSet<NodeId> = (0..5).map(NodeId).collect();
        let mut per_epoch: BTreeMap<u64, usize> = BTreeMap::new();
        for r in records {
            match &r.entry {
                Entry::MembershipChange { alive: a, .. } => alive = a.clone(),
                Entry::Election { epoch, leader } => {
                    *per_epoch.entry(*epoch).or_default() += 1;
                    if Some(leader) != alive.first() {
                        return Err(format!("seed {seed}: epoch {epoch} elected {leader}, alive {alive:?}"));
                    }
                }
                _ => {}
            }
        }
        if per_epoch.is_empty() {
            return Err(format!("seed {seed}: leader crash caused no election"));
        }
        if let Some((epoch, n)) = per_epoch.iter().find(|(_, n)| **n != 1) {
            return Err(format!("seed {seed}: {n} elections in epoch {epoch}"));
        }
        elections += per_epoch.len();
        if out.report.horizon_reached || out.report.counts.consensus != out.report.verdicts.len() as u64 {
            return Err(format!("seed {seed}: {:?}", out.report.counts));
        }
    }
    Ok(format!(
        "100 leader crashes, {elections} elections, one per epoch, smallest live id, every request decided"
    ))
}

fn determinism() -> Outcome {
    let names = bundled_names();
    for name in &names {
        let scenario = bundled(name);
        let seed = scenario.seed();
        let a = run(scenario.clone()).log.render();
        let b = run(scenario.clone()).log.render();
        if a != b {
            return Err(format!("{name}: two runs with seed {seed} differ"));
        }
        let c = run(scenario.with_seed(seed.wrapping_add(1))).log.render();
        if a == c {
            return Err(format!("{name}: changing the seed left the log unchanged"));
        }
    }
    Ok(format!("{} bundled scenarios byte-identical per seed, distinct across seeds", names.len()))
}

fn proposal_numbers(audit: &NumberAudit) -> Outcome {
    if let Some(v) = audit.violations.first() {
        return Err(format!("{} violations, first: {v}", audit.violations.len()));
    }
    Ok(format!("{} logs scanned, no violations", audit.logs))
}

/// Decision table written out case by case, independent of the learner.
fn table_decision(tuples: &[(NodeId, Tuple)], membership: usize, deadline: bool) -> Verdict {
    let needed = membership / 2 + 1;
    let top = tuples.iter().map(|(_, t)| t.n).max();
    let current: Vec<&(NodeId, Tuple)> = tuples.iter().filter(|(_, t)| Some(t.n) == top).collect();
    let received = current.len();
    let mut pairs: Vec<(String, String)> = current
        .iter()
        .map(|(_, t)| (t.output.clone(), t.new_state.clone()))
        .collect();
    pairs.sort();
    pairs.dedup();
    if pairs.len() > 1 {
        // winner: most members, then smallest state, then smallest output
        let count = |p: &(String, String)| {
            current
                .iter()
                .filter(|(_, t)| t.output == p.0 && t.new_state == p.1)
                .count()
        };
        let mut best = pairs[0].clone();
        for p in &pairs[1..] {
            let (cb, cp) = (count(&best), count(p));
            if cp > cb || (cp == cb && (p.1.clone(), p.0.clone()) < (best.1.clone(), best.0.clone())) {
                best = p.clone();
            }
        }
        let mut d = Divergence {
            agreeing: BTreeSet::new(),
            dissenting: BTreeSet::new(),
            states_seen: BTreeMap::new(),
        };
        for (id, t) in &current {
            if t.output == best.0 && t.new_state == best.1 {
                d.agreeing.insert(*id);
            } else {
                d.dissenting.insert(*id);
            }
            *d.states_seen.entry(t.new_state.clone()).or_insert(0) += 1;
        }
        return Verdict::Anomaly(d);
    }
    match pairs.first() {
        Some((output, state)) if received >= needed && (deadline || received >= membership) => Verdict::Consensus {
            output: output.clone(),
            state: state.clone(),
        },
        _ => Verdict::Inconclusive { received, needed },
    }
}

fn learner_oracle() -> Outcome {
    const PAIRS: [(&str, &str); 3] = [("OK", "S1"), ("Error", "S1"), ("OK", "S7")];
    let numbers = [ProposalNumber::new(1, NodeId(0)), ProposalNumber::new(2, NodeId(1))];
    let mut cases = 0u64;
    for membership in 1..=7usize {
        for reporters in 0..=membership {
            // each reporter picks one of three pairs, and, for up to five
            // reporters, one of two proposal numbers
            let choices = if reporters <= 5 { PAIRS.len() * numbers.len() } else { PAIRS.len() };
            let total = choices.pow(reporters as u32);
            for code in 0..total {
                let mut c = code;
                let mut ledger = InstanceLedger::default();
                let mut tuples = Vec::new();
                for node in 0..reporters {
                    let pick = c % choices;
                    c /= choices;
                    let (output, state) = PAIRS[pick % PAIRS.len()];
                    let tuple = Tuple {
                        n: numbers[pick / PAIRS.len()],
                        output: output.into(),
                        new_state: state.into(),
                    };
                    ledger.on_accepted(NodeId(node as u32), tuple.clone());
                    tuples.push((NodeId(node as u32), tuple));
                }
                for deadline in [false, true] {
                    cases += 1;
                    let got = decide(&ledger, membership, deadline);
                    let want = table_decision(&tuples, membership, deadline);
                    if got != want {
                        return Err(format!(
                            "membership {membership}, deadline {deadline}, tuples {tuples:?}: decide gave {got:?}, table {want:?}"
                        ));
                    }
                }
            }
        }
    }
    Ok(format!("{cases} tuple multisets agree with the decision table"))
}

fn main() -> ExitCode {
    let mut audit = NumberAudit::default();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 safety (agreement)", safety(&mut audit)),
        ("2 detection completeness", detection()),
        ("3 partial-quorum majority", partial_quorum(&mut audit)),
        ("4 threshold machine semantics", threshold_machine(&mut audit)),
        ("5 leader election", election(&mut audit)),
        ("6 determinism", determinism()),
        ("7 proposal-number properties", proposal_numbers(&audit)),
        ("8 learner oracle equivalence", learner_oracle()),
    ];
    let mut failed = false;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(why) => {
                failed = true;
                println!("FAIL  criterion {name}: {why}");
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
