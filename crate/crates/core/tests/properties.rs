mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use paxsim::acceptor::AcceptorState;
use paxsim::audit::{audit_log, check_report};
use paxsim::eventlog::{parse_log, Entry, Record};
use paxsim::learner::{decide, InstanceLedger, Tuple, Verdict};
use paxsim::messages::{Address, ClientRequest, NodeId, Packet, ProposalNumber};
use paxsim::replay::replay;
use paxsim::simnet::{EventKind, NetConfig, Network};
use paxsim::statemachine::{apply, compile, AppModel, Threshold};

fn pn() -> impl Strategy<Value = ProposalNumber> {
    (0u64..50, 0u32..9).prop_map(|(r, p)| ProposalNumber::new(r, NodeId(p)))
}

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9 /%=,:]{0,12}",
        any::<String>().prop_map(|s| s.chars().take(10).collect()),
    ]
}

/// A packet together with the envelope sender its encoding relies on.
fn packet() -> impl Strategy<Value = (Address, Packet)> {
    let node = (0u32..9).prop_map(NodeId);
    prop_oneof![
        (pn(), 0u64..5, 0u64..20, text()).prop_map(|(n, epoch, id, p)| (
            Address::Node(n.proposer),
            Packet::Prepare {
                n,
                epoch,
                request: ClientRequest::new(id, p)
            }
        )),
        (pn(), proptest::option::of(pn()), node.clone()).prop_map(|(n, last_served, from)| (
            Address::Node(from),
            Packet::Promise { n, last_served, from }
        )),
        (pn(), 0u64..5, 0u64..20, text()).prop_map(|(n, epoch, id, p)| (
            Address::Node(n.proposer),
            Packet::AcceptRequest {
                n,
                epoch,
                request: ClientRequest::new(id, p)
            }
        )),
        (pn(), 0u64..20, text(), text(), node.clone()).prop_map(|(n, request_id, output, new_state, from)| (
            Address::Node(from),
            Packet::Accepted {
                n,
                request_id,
                output,
                new_state,
                from
            }
        )),
        (node, any::<u64>()).prop_map(|(from, seq)| (Address::Node(from), Packet::Heartbeat { from, seq })),
        (0u64..20, text()).prop_map(|(request_id, output)| (
            Address::Learner,
            Packet::ClientResponse { request_id, output }
        )),
    ]
}

proptest! {
    #[test]
    fn packet_records_round_trip((from, packet) in packet(), time in 0u64..10_000, seq in 0u64..10_000) {
        let record = Record {
            time,
            seq,
            entry: Entry::Packet { from, to: Address::Node(NodeId(3)), packet },
        };
        let line = record.to_string();
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(Record::parse(&line).unwrap(), record);
    }

    #[test]
    fn events_pop_in_time_then_seq_order(times in proptest::collection::vec(0u64..30, 1..60)) {
        let mut net = Network::new(NetConfig::default(), 1);
        for (i, t) in times.iter().enumerate() {
            net.schedule(*t, EventKind::ClientArrival(ClientRequest::new(i as u64, "x")));
        }
        let mut last = None;
        while let Ok(e) = net.pop() {
            if let Some(prev) = last {
                prop_assert!((e.time, e.seq) > prev);
            }
            last = Some((e.time, e.seq));
        }
    }

    #[test]
    fn machine_stays_in_declared_states(
        seed in any::<u64>(),
        steps in proptest::collection::vec((0usize..5, 0usize..4), 0..40),
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let config = common::random_machine(&mut rng);
        let def = compile(&config).unwrap();
        let states: BTreeSet<&str> = def.states.iter().map(String::as_str).collect();
        let mut a = def.initial();
        let mut b = def.initial();
        for (p, o) in steps {
            let (input, output) = (common::PAYLOADS[p], common::OUTPUTS[o]);
            a = apply(&def, &a, input, output);
            b = apply(&def, &b, input, output);
            prop_assert!(states.contains(a.current.as_str()));
            prop_assert!(a.counters.len() <= 1);
            for (rule, count) in &a.counters {
                let r = &def.rules[*rule];
                prop_assert_eq!(&r.from, &a.current);
                match r.threshold {
                    Threshold::Count(k) => prop_assert!(*count <= k),
                    Threshold::Star => prop_assert!(false, "star rules keep no counter"),
                }
            }
        }
        // two replicas fed the same sequence end up identical
        prop_assert_eq!(a, b);
    }

    #[test]
    fn divergent_reports_are_always_anomalies(
        pairs in proptest::collection::vec(0usize..3, 2..8),
        membership in 1usize..8,
        deadline in any::<bool>(),
    ) {
        const PAIRS: [(&str, &str); 3] = [("OK", "A"), ("OK", "B"), ("Error", "A")];
        let mut ledger = InstanceLedger::default();
        for (i, p) in pairs.iter().enumerate() {
            ledger.on_accepted(NodeId(i as u32), Tuple {
                n: ProposalNumber::new(1, NodeId(0)),
                output: PAIRS[*p].0.into(),
                new_state: PAIRS[*p].1.into(),
            });
        }
        let distinct: BTreeSet<_> = pairs.iter().collect();
        let verdict = decide(&ledger, membership, deadline);
        prop_assert_eq!(matches!(verdict, Verdict::Anomaly(_)), distinct.len() > 1);
        if let Verdict::Anomaly(d) = verdict {
            prop_assert!(d.agreeing.len() >= d.dissenting.len() || d.dissenting.len() > 1);
            prop_assert!(d.agreeing.is_disjoint(&d.dissenting));
            prop_assert_eq!(d.agreeing.len() + d.dissenting.len(), pairs.len());
        }
    }

    #[test]
    fn promises_strictly_increase(numbers in proptest::collection::vec(pn(), 1..40)) {
        let def = compile(&paxsim::statemachine::MachineConfig {
            states: vec!["S".into()],
            start: Some("S".into()),
            rules: vec![],
        }).unwrap();
        let mut acceptor = AcceptorState::new(NodeId(0), &def, AppModel::new("OK"));
        let mut promised: Vec<ProposalNumber> = Vec::new();
        for n in numbers {
            let before = acceptor.highest_promised;
            match acceptor.on_prepare(n, 0) {
                Some(Packet::Promise { n: got, .. }) => {
                    prop_assert!(before.is_none_or(|b| got > b));
                    promised.push(got);
                }
                Some(other) => prop_assert!(false, "unexpected {other:?}"),
                None => prop_assert!(before.is_some_and(|b| n <= b)),
            }
        }
        prop_assert!(promised.windows(2).all(|w| w[0] < w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Whole runs: the log is ordered, proposal numbers behave, majorities
    /// are real, crashed nodes stay quiet, the report matches the log, the
    /// log parses back, and replay re-derives every verdict.
    #[test]
    fn simulated_runs_pass_every_audit(seed in any::<u64>()) {
        let scenario = common::honest_scenario(seed);
        let net = scenario.config.net.clone();
        let out = paxsim::run(scenario);
        let records = out.log.records();
        let violations = audit_log(records, &net);
        prop_assert!(violations.is_empty(), "{violations:?}");
        let mismatched = check_report(&out.report, records);
        prop_assert!(mismatched.is_empty(), "{mismatched:?}");
        prop_assert_eq!(&parse_log(&out.log.render()).unwrap(), records);
        let replayed = replay(records).unwrap();
        prop_assert!(replayed.is_clean(), "{:?}", replayed.mismatches);
        prop_assert!(out.report.anomalies.is_empty());
    }

    #[test]
    fn compromised_runs_replay_cleanly(seed in any::<u64>()) {
        let (scenario, _) = common::compromised_scenario(seed);
        let net = scenario.config.net.clone();
        let out = paxsim::run(scenario);
        let records = out.log.records();
        prop_assert!(audit_log(records, &net).is_empty());
        prop_assert!(replay(records).unwrap().is_clean());
        prop_assert!(check_report(&out.report, records).is_empty());
    }
}
