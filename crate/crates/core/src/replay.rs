//! Re-deriving learner verdicts from an event log.
//!
//! The log holds every input the learner acts on: the `Accepted` packets
//! delivered to it, membership changes, instance deadlines and the closing
//! record. Feeding those into a fresh [`Learner`] in log order must
//! reproduce the logged `Verdict` records exactly.

use std::fmt;

use thiserror::Error;

use crate::eventlog::{Entry, Record};
use crate::learner::{Learner, Tuple, Verdict};
use crate::messages::{Address, Packet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("log does not begin with a Start record")]
    MissingStart,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    /// Position in the verdict sequence.
    pub index: usize,
    pub logged: Option<(u64, Verdict)>,
    pub replayed: Option<(u64, Verdict)>,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: &Option<(u64, Verdict)>| match v {
            Some((i, v)) => format!("instance {i} {}", v.name()),
            None => "nothing".to_string(),
        };
        write!(
            f,
            "verdict #{}: log has {}, replay gives {}",
            self.index,
            show(&self.logged),
            show(&self.replayed)
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub verdicts: Vec<(u64, Verdict)>,
    pub mismatches: Vec<Mismatch>,
}

impl ReplayOutcome {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

pub fn replay(records: &[Record]) -> Result<ReplayOutcome, ReplayError> {
    let Some(Entry::Start { acceptors, policy, .. }) = records.first().map(|r| &r.entry) else {
        return Err(ReplayError::MissingStart);
    };
    let mut learner = Learner::new(*policy, *acceptors as usize);
    let mut replayed = Vec::new();
    let mut logged = Vec::new();
    for record in records {
        match &record.entry {
            Entry::Packet {
                to: Address::Learner,
                packet:
                    Packet::Accepted {
                        n,
                        request_id,
                        output,
                        new_state,
                        from,
                    },
                ..
            } => {
                let tuple = Tuple {
                    n: *n,
                    output: output.clone(),
                    new_state: new_state.clone(),
                };
                replayed.extend(learner.on_accepted(*request_id, *from, tuple).decision);
            }
            Entry::MembershipChange { alive, .. } => replayed.extend(learner.on_membership(alive.len())),
            Entry::Deadline { instance } => replayed.extend(learner.on_deadline(*instance)),
            Entry::End { requests, .. } => replayed.extend(learner.finalize(0..*requests)),
            Entry::Verdict { instance, verdict } => logged.push((*instance, verdict.clone())),
            _ => {}
        }
    }
    let verdicts: Vec<(u64, Verdict)> = replayed.into_iter().map(|d| (d.instance, d.verdict)).collect();
    let mismatches = (0..logged.len().max(verdicts.len()))
        .filter_map(|i| {
            let (l, r) = (logged.get(i).cloned(), verdicts.get(i).cloned());
            (l != r).then_some(Mismatch {
                index: i,
                logged: l,
                replayed: r,
            })
        })
        .collect();
    Ok(ReplayOutcome { verdicts, mismatches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::AnomalyPolicy;
    use crate::messages::{NodeId, ProposalNumber};

    fn rec(seq: u64, entry: Entry) -> Record {
        Record { time: seq, seq, entry }
    }

    fn accepted(from: u32, output: &str) -> Entry {
        Entry::Packet {
            from: Address::Node(NodeId(from)),
            to: Address::Learner,
            packet: Packet::Accepted {
                n: ProposalNumber::new(1, NodeId(0)),
                request_id: 0,
                output: output.into(),
                new_state: "S".into(),
                from: NodeId(from),
            },
        }
    }

    fn start() -> Entry {
        Entry::Start {
            scenario: "t".into(),
            acceptors: 2,
            seed: 0,
            policy: AnomalyPolicy::Strict,
        }
    }

    #[test]
    fn consensus_is_rederived() {
        let consensus = Verdict::Consensus {
            output: "OK".into(),
            state: "S".into(),
        };
        let log = vec![
            rec(0, start()),
            rec(1, accepted(0, "OK")),
            rec(2, accepted(1, "OK")),
            rec(
                3,
                Entry::Verdict {
                    instance: 0,
                    verdict: consensus.clone(),
                },
            ),
            rec(
                4,
                Entry::End {
                    requests: 1,
                    horizon: false,
                },
            ),
        ];
        let out = replay(&log).unwrap();
        assert!(out.is_clean(), "{:?}", out.mismatches);
        assert_eq!(out.verdicts, vec![(0, consensus)]);
    }

    #[test]
    fn tampered_verdict_is_reported() {
        let log = vec![
            rec(0, start()),
            rec(1, accepted(0, "OK")),
            rec(2, accepted(1, "Error")),
            rec(
                3,
                Entry::Verdict {
                    instance: 0,
                    verdict: Verdict::Consensus {
                        output: "OK".into(),
                        state: "S".into(),
                    },
                },
            ),
        ];
        let out = replay(&log).unwrap();
        assert_eq!(out.mismatches.len(), 1);
        assert!(matches!(out.mismatches[0].replayed, Some((0, Verdict::Anomaly(_)))));
    }

    #[test]
    fn start_is_required() {
        assert_eq!(replay(&[]), Err(ReplayError::MissingStart));
    }
}
