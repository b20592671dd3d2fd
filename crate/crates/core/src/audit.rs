//! Log-scanning verifiers.
//!
//! Each check reads a finished event log and returns the violations it
//! found, empty when the property holds. They are used by the tests and by
//! the acceptance suite; none of them looks at simulator internals.

use std::collections::{BTreeMap, BTreeSet};

use crate::eventlog::{Entry, Record};
use crate::harness::Report;
use crate::learner::Verdict;
use crate::messages::{Address, NodeId, Packet, ProposalNumber};
use crate::proposer::majority_threshold;
use crate::simnet::{NetConfig, Time};

/// Records are in strictly increasing `(time, seq)` order and `seq` counts
/// from zero.
pub fn check_order(records: &[Record]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64 {
            out.push(format!("record {i} has seq {}", r.seq));
        }
        if i > 0 && records[i - 1].time > r.time {
            out.push(format!("record {i} goes back in time ({} after {})", r.time, records[i - 1].time));
        }
    }
    out
}

/// Proposal numbers a packet makes visible to its receiver.
fn numbers_in(packet: &Packet) -> Vec<ProposalNumber> {
    match packet {
        Packet::Prepare { n, .. } | Packet::AcceptRequest { n, .. } | Packet::Accepted { n, .. } => vec![*n],
        Packet::Promise { n, last_served, .. } => std::iter::once(*n).chain(*last_served).collect(),
        Packet::Heartbeat { .. } | Packet::ClientResponse { .. } => Vec::new(),
    }
}

/// Every proposer's numbers strictly increase, and every re-proposal
/// exceeds all numbers delivered to that node before it.
pub fn check_proposal_numbers(records: &[Record]) -> Vec<String> {
    let mut out = Vec::new();
    let mut last: BTreeMap<NodeId, ProposalNumber> = BTreeMap::new();
    let mut seen: BTreeMap<NodeId, ProposalNumber> = BTreeMap::new();
    for r in records {
        match &r.entry {
            Entry::Packet {
                to: Address::Node(to),
                packet,
                ..
            } => {
                for n in numbers_in(packet) {
                    let top = seen.entry(*to).or_insert(n);
                    *top = (*top).max(n);
                }
            }
            Entry::Propose { node, n, .. } | Entry::Repropose { node, n, .. } => {
                if n.proposer != *node {
                    out.push(format!("seq {}: node {node} issued {n} under another id", r.seq));
                }
                if let Some(prev) = last.get(node) {
                    if n.round <= prev.round {
                        out.push(format!("seq {}: node {node} issued round {} after {}", r.seq, n.round, prev.round));
                    }
                }
                last.insert(*node, *n);
                if let Entry::Repropose { .. } = r.entry {
                    if let Some(top) = seen.get(node).filter(|top| **top >= *n) {
                        out.push(format!("seq {}: node {node} re-proposed {n} but had seen {top}", r.seq));
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// Each `MajorityReached` is backed by a real majority of distinct
/// promises for that number and happens once per number.
pub fn check_majorities(records: &[Record]) -> Vec<String> {
    let mut out = Vec::new();
    let mut promised: BTreeMap<(NodeId, ProposalNumber), BTreeSet<NodeId>> = BTreeMap::new();
    let mut reached: BTreeSet<(NodeId, ProposalNumber)> = BTreeSet::new();
    for r in records {
        match &r.entry {
            Entry::Packet {
                to: Address::Node(to),
                packet: Packet::Promise { n, from, .. },
                ..
            } => {
                promised.entry((*to, *n)).or_default().insert(*from);
            }
            Entry::MajorityReached {
                node,
                n,
                promises,
                membership,
                ..
            } => {
                let needed = majority_threshold(*membership).unwrap_or(usize::MAX);
                if *promises < needed || promises > membership {
                    out.push(format!("seq {}: {promises} promises of {membership} is no majority", r.seq));
                }
                let got = promised.get(&(*node, *n)).map_or(0, |s| s.len());
                if got < *promises {
                    out.push(format!("seq {}: claims {promises} promises for {n}, log shows {got}", r.seq));
                }
                if !reached.insert((*node, *n)) {
                    out.push(format!("seq {}: second majority for {n}", r.seq));
                }
            }
            _ => {}
        }
    }
    out
}

/// Longest time a packet can spend on the wire under `net`.
pub fn max_delay(net: &NetConfig) -> Time {
    net.links
        .iter()
        .map(|l| l.delay)
        .chain([net.base_delay])
        .max()
        .unwrap_or(0)
        + net.jitter
}

/// A crashed node sends nothing: after its `Crash` record it has no drops,
/// and no deliveries from it later than a packet sent at the crash could
/// take.
pub fn check_crashed_silence(records: &[Record], net: &NetConfig) -> Vec<String> {
    let bound = max_delay(net);
    let mut crashed: BTreeMap<NodeId, Time> = BTreeMap::new();
    let mut out = Vec::new();
    for r in records {
        match &r.entry {
            Entry::Crash { node } => {
                crashed.insert(*node, r.time);
            }
            Entry::Drop {
                from: Address::Node(from),
                ..
            } if crashed.contains_key(from) => {
                out.push(format!("seq {}: crashed node {from} sent a packet", r.seq));
            }
            Entry::Packet {
                from: Address::Node(from),
                ..
            }
            | Entry::DiscardCrashed {
                from: Address::Node(from),
                ..
            } => {
                if let Some(at) = crashed.get(from).filter(|at| r.time > **at + bound) {
                    out.push(format!("seq {}: delivery from node {from} crashed at {at}", r.seq));
                }
            }
            _ => {}
        }
    }
    out
}

/// The report's totals agree with the records in the log.
pub fn check_report(report: &Report, records: &[Record]) -> Vec<String> {
    let mut kinds: BTreeMap<&str, u64> = BTreeMap::new();
    let mut verdicts: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records {
        *kinds.entry(r.entry.kind()).or_default() += 1;
        if let Entry::Verdict { verdict, .. } = &r.entry {
            *verdicts.entry(verdict.name()).or_default() += 1;
        }
    }
    let get = |m: &BTreeMap<&str, u64>, k: &str| m.get(k).copied().unwrap_or(0);
    let c = &report.counts;
    let pairs = [
        ("consensus", c.consensus, get(&verdicts, "Consensus")),
        ("anomaly", c.anomaly, get(&verdicts, "Anomaly")),
        ("inconclusive", c.inconclusive, get(&verdicts, "Inconclusive")),
        ("reproposals", c.reproposals, get(&kinds, "Repropose")),
        ("elections", c.elections, get(&kinds, "Election")),
        ("drops", c.drops, get(&kinds, "Drop")),
        ("anomaly reports", report.anomalies.len() as u64, get(&kinds, "AnomalyReport")),
        ("verdicts", report.verdicts.len() as u64, get(&kinds, "Verdict")),
    ];
    let mut out: Vec<String> = pairs
        .iter()
        .filter(|(_, a, b)| a != b)
        .map(|(name, a, b)| format!("report says {a} {name}, log has {b}"))
        .collect();
    let total = c.consensus + c.anomaly + c.inconclusive;
    if total != report.verdicts.len() as u64 {
        out.push(format!("{total} verdicts for {} requests", report.verdicts.len()));
    }
    for v in &report.verdicts {
        let logged = records.iter().rev().find_map(|r| match &r.entry {
            Entry::Verdict { instance, verdict } if *instance == v.request_id => Some(verdict),
            _ => None,
        });
        if logged != Some(&v.verdict) {
            out.push(format!("request {} verdict differs from the log", v.request_id));
        }
    }
    out
}

/// Every check that needs only the log and the network settings.
pub fn audit_log(records: &[Record], net: &NetConfig) -> Vec<String> {
    let mut out = check_order(records);
    out.extend(check_proposal_numbers(records));
    out.extend(check_majorities(records));
    out.extend(check_crashed_silence(records, net));
    out
}

/// Verdicts logged per instance. An instance with more than one verdict
/// shows up twice, which the callers treat as a violation of finality.
pub fn logged_verdicts(records: &[Record]) -> Vec<(u64, Verdict)> {
    records
        .iter()
        .filter_map(|r| match &r.entry {
            Entry::Verdict { instance, verdict } => Some((*instance, verdict.clone())),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(time: Time, seq: u64, entry: Entry) -> Record {
        Record { time, seq, entry }
    }

    fn pn(r: u64, p: u32) -> ProposalNumber {
        ProposalNumber::new(r, NodeId(p))
    }

    #[test]
    fn order_violation_found() {
        let end = Entry::End {
            requests: 0,
            horizon: false,
        };
        let log = vec![rec(5, 0, end.clone()), rec(4, 1, end.clone()), rec(6, 3, end)];
        assert_eq!(check_order(&log).len(), 2);
    }

    #[test]
    fn low_reproposal_is_flagged() {
        let log = vec![
            rec(0, 0, Entry::Propose {
                node: NodeId(0),
                request_id: 0,
                n: pn(1, 0),
            }),
            rec(1, 1, Entry::Packet {
                from: Address::Node(NodeId(1)),
                to: Address::Node(NodeId(0)),
                packet: Packet::Promise {
                    n: pn(1, 0),
                    last_served: Some(pn(4, 2)),
                    from: NodeId(1),
                },
            }),
            rec(2, 2, Entry::Repropose {
                node: NodeId(0),
                request_id: 0,
                old: pn(1, 0),
                n: pn(3, 0),
            }),
        ];
        let v = check_proposal_numbers(&log);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].contains("had seen 4.2"));
    }

    #[test]
    fn unbacked_majority_is_flagged() {
        let log = vec![rec(0, 0, Entry::MajorityReached {
            node: NodeId(0),
            request_id: 0,
            n: pn(1, 0),
            promises: 3,
            membership: 5,
        })];
        assert_eq!(check_majorities(&log).len(), 1);
    }

    #[test]
    fn max_delay_includes_links_and_jitter() {
        let mut net = NetConfig {
            jitter: 2,
            ..NetConfig::default()
        };
        assert_eq!(max_delay(&net), 3);
        net.links.push(crate::simnet::LinkDelay {
            between: [0, 1],
            delay: 40,
        });
        assert_eq!(max_delay(&net), 42);
    }
}
