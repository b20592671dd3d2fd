//! Line-oriented event log.
//!
//! Each record is one line of space-separated `key=value` tokens, always
//! starting with `time=<t> seq=<s> kind=<kind>`. Text values are
//! percent-escaped so a line never contains spaces inside a value. The log
//! is append-only and ordered by `(time, seq)`; two runs of the same
//! scenario and seed produce byte-identical logs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use crate::learner::{AnomalyPolicy, Divergence, Verdict};
use crate::messages::{escape, Address, ClientRequest, Fields, NodeId, Packet, PacketKind, ParseError, ProposalNumber};
use crate::simnet::Time;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Entry {
    Start {
        scenario: String,
        acceptors: u32,
        seed: u64,
        policy: AnomalyPolicy,
    },
    /// A packet handed to its destination.
    Packet {
        from: Address,
        to: Address,
        packet: Packet,
    },
    Drop {
        from: Address,
        to: Address,
        packet: Packet,
    },
    DiscardCrashed {
        from: Address,
        to: Address,
        packet: Packet,
    },
    ClientArrival {
        request: ClientRequest,
        leader: NodeId,
    },
    Crash {
        node: NodeId,
    },
    Compromise {
        node: NodeId,
    },
    Failure {
        node: NodeId,
    },
    Rejoin {
        node: NodeId,
    },
    MembershipChange {
        epoch: u64,
        alive: BTreeSet<NodeId>,
    },
    Election {
        epoch: u64,
        leader: NodeId,
    },
    /// A proposer starts an instance with its first proposal number.
    Propose {
        node: NodeId,
        request_id: u64,
        n: ProposalNumber,
    },
    Repropose {
        node: NodeId,
        request_id: u64,
        old: ProposalNumber,
        n: ProposalNumber,
    },
    MajorityReached {
        node: NodeId,
        request_id: u64,
        n: ProposalNumber,
        promises: usize,
        membership: usize,
    },
    Completed {
        node: NodeId,
        request_id: u64,
    },
    Deadline {
        instance: u64,
    },
    Verdict {
        instance: u64,
        verdict: Verdict,
    },
    AnomalyReport {
        instance: u64,
        divergence: Divergence,
    },
    Halt {
        reason: String,
    },
    End {
        requests: u64,
        horizon: bool,
    },
}

impl Entry {
    pub fn kind(&self) -> &'static str {
        match self {
            Entry::Start { .. } => "Start",
            Entry::Packet { packet, .. } => packet.kind().as_str(),
            Entry::Drop { .. } => "Drop",
            Entry::DiscardCrashed { .. } => "DiscardCrashed",
            Entry::ClientArrival { .. } => "ClientArrival",
            Entry::Crash { .. } => "Crash",
            Entry::Compromise { .. } => "Compromise",
            Entry::Failure { .. } => "Failure",
            Entry::Rejoin { .. } => "Rejoin",
            Entry::MembershipChange { .. } => "MembershipChange",
            Entry::Election { .. } => "Election",
            Entry::Propose { .. } => "Propose",
            Entry::Repropose { .. } => "Repropose",
            Entry::MajorityReached { .. } => "MajorityReached",
            Entry::Completed { .. } => "Completed",
            Entry::Deadline { .. } => "Deadline",
            Entry::Verdict { .. } => "Verdict",
            Entry::AnomalyReport { .. } => "AnomalyReport",
            Entry::Halt { .. } => "Halt",
            Entry::End { .. } => "End",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub time: Time,
    pub seq: u64,
    pub entry: Entry,
}

fn join_ids(ids: &BTreeSet<NodeId>) -> String {
    if ids.is_empty() {
        return "-".to_string();
    }
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_ids(raw: &str) -> Result<BTreeSet<NodeId>, ParseError> {
    if raw == "-" {
        return Ok(BTreeSet::new());
    }
    raw.split(',')
        .map(|s| s.parse().map_err(|_| ParseError::BadValue("ids", raw.to_string())))
        .collect()
}

fn join_states(states: &BTreeMap<String, usize>) -> String {
    states
        .iter()
        .map(|(s, c)| format!("{}:{c}", escape(s)))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_states(raw: &str) -> Result<BTreeMap<String, usize>, ParseError> {
    if raw.is_empty() {
        return Ok(BTreeMap::new());
    }
    raw.split(',')
        .map(|item| {
            let bad = || ParseError::BadValue("states", raw.to_string());
            let (name, count) = item.split_once(':').ok_or_else(bad)?;
            Ok((crate::messages::unescape(name)?, count.parse().map_err(|_| bad())?))
        })
        .collect()
}

fn divergence_fields(d: &Divergence) -> [(&'static str, String); 3] {
    [
        ("agreeing", join_ids(&d.agreeing)),
        ("dissenting", join_ids(&d.dissenting)),
        ("states", join_states(&d.states_seen)),
    ]
}

fn parse_divergence(f: &Fields<'_>) -> Result<Divergence, ParseError> {
    Ok(Divergence {
        agreeing: parse_ids(f.raw("agreeing")?)?,
        dissenting: parse_ids(f.raw("dissenting")?)?,
        states_seen: parse_states(f.raw("states")?)?,
    })
}

fn packet_envelope(from: &Address, to: &Address, packet: &Packet) -> Vec<(&'static str, String)> {
    let mut fields = vec![("from", from.to_string()), ("to", to.to_string())];
    fields.extend(packet.encode_fields());
    fields
}

impl Record {
    fn fields(&self) -> Vec<(&'static str, String)> {
        match &self.entry {
            Entry::Start {
                scenario,
                acceptors,
                seed,
                policy,
            } => vec![
                ("scenario", escape(scenario)),
                ("acceptors", acceptors.to_string()),
                ("seed", seed.to_string()),
                ("policy", policy.as_str().to_string()),
            ],
            Entry::Packet { from, to, packet } => packet_envelope(from, to, packet),
            Entry::Drop { from, to, packet } | Entry::DiscardCrashed { from, to, packet } => {
                let mut f = vec![("packet", packet.kind().to_string())];
                f.extend(packet_envelope(from, to, packet));
                f
            }
            Entry::ClientArrival { request, leader } => vec![
                ("req", request.request_id.to_string()),
                ("payload", escape(&request.payload)),
                ("leader", leader.to_string()),
            ],
            Entry::Crash { node }
            | Entry::Compromise { node }
            | Entry::Failure { node }
            | Entry::Rejoin { node } => vec![("node", node.to_string())],
            Entry::MembershipChange { epoch, alive } => vec![
                ("epoch", epoch.to_string()),
                ("alive", join_ids(alive)),
                ("size", alive.len().to_string()),
            ],
            Entry::Election { epoch, leader } => {
                vec![("epoch", epoch.to_string()), ("leader", leader.to_string())]
            }
            Entry::Propose { node, request_id, n } => vec![
                ("node", node.to_string()),
                ("req", request_id.to_string()),
                ("n", n.to_string()),
            ],
            Entry::Repropose {
                node,
                request_id,
                old,
                n,
            } => vec![
                ("node", node.to_string()),
                ("req", request_id.to_string()),
                ("old", old.to_string()),
                ("n", n.to_string()),
            ],
            Entry::MajorityReached {
                node,
                request_id,
                n,
                promises,
                membership,
            } => vec![
                ("node", node.to_string()),
                ("req", request_id.to_string()),
                ("n", n.to_string()),
                ("promises", promises.to_string()),
                ("membership", membership.to_string()),
            ],
            Entry::Completed { node, request_id } => {
                vec![("node", node.to_string()), ("req", request_id.to_string())]
            }
            Entry::Deadline { instance } => vec![("instance", instance.to_string())],
            Entry::Verdict { instance, verdict } => {
                let mut f = vec![
                    ("verdict", verdict.name().to_string()),
                    ("instance", instance.to_string()),
                ];
                match verdict {
                    Verdict::Consensus { output, state } => {
                        f.push(("output", escape(output)));
                        f.push(("state", escape(state)));
                    }
                    Verdict::Anomaly(d) => f.extend(divergence_fields(d)),
                    Verdict::Inconclusive { received, needed } => {
                        f.push(("received", received.to_string()));
                        f.push(("needed", needed.to_string()));
                    }
                }
                f
            }
            Entry::AnomalyReport { instance, divergence } => {
                let mut f = vec![("instance", instance.to_string())];
                f.extend(divergence_fields(divergence));
                f
            }
            Entry::Halt { reason } => vec![("reason", escape(reason))],
            Entry::End { requests, horizon } => vec![
                ("requests", requests.to_string()),
                ("horizon", horizon.to_string()),
            ],
        }
    }

    pub fn parse(line: &str) -> Result<Record, ParseError> {
        let f = Fields::parse_line(line)?;
        let time = f.parse("time")?;
        let seq = f.parse("seq")?;
        let kind = f.raw("kind")?;
        let node = || f.parse::<NodeId>("node");
        let packet_of = |kind: PacketKind| -> Result<(Address, Address, Packet), ParseError> {
            let from: Address = f.parse("from")?;
            let to: Address = f.parse("to")?;
            let packet = Packet::decode_fields(kind, from.node(), &f)?;
            Ok((from, to, packet))
        };
        let entry = match kind {
            "Start" => Entry::Start {
                scenario: f.text("scenario")?,
                acceptors: f.parse("acceptors")?,
                seed: f.parse("seed")?,
                policy: f.parse("policy")?,
            },
            "Drop" | "DiscardCrashed" => {
                let (from, to, packet) = packet_of(f.parse("packet")?)?;
                if kind == "Drop" {
                    Entry::Drop { from, to, packet }
                } else {
                    Entry::DiscardCrashed { from, to, packet }
                }
            }
            "ClientArrival" => Entry::ClientArrival {
                request: ClientRequest {
                    request_id: f.parse("req")?,
                    payload: f.text("payload")?,
                },
                leader: f.parse("leader")?,
            },
            "Crash" => Entry::Crash { node: node()? },
            "Compromise" => Entry::Compromise { node: node()? },
            "Failure" => Entry::Failure { node: node()? },
            "Rejoin" => Entry::Rejoin { node: node()? },
            "MembershipChange" => Entry::MembershipChange {
                epoch: f.parse("epoch")?,
                alive: parse_ids(f.raw("alive")?)?,
            },
            "Election" => Entry::Election {
                epoch: f.parse("epoch")?,
                leader: f.parse("leader")?,
            },
            "Propose" => Entry::Propose {
                node: node()?,
                request_id: f.parse("req")?,
                n: f.parse("n")?,
            },
            "Repropose" => Entry::Repropose {
                node: node()?,
                request_id: f.parse("req")?,
                old: f.parse("old")?,
                n: f.parse("n")?,
            },
            "MajorityReached" => Entry::MajorityReached {
                node: node()?,
                request_id: f.parse("req")?,
                n: f.parse("n")?,
                promises: f.parse("promises")?,
                membership: f.parse("membership")?,
            },
            "Completed" => Entry::Completed {
                node: node()?,
                request_id: f.parse("req")?,
            },
            "Deadline" => Entry::Deadline {
                instance: f.parse("instance")?,
            },
            "Verdict" => {
                let verdict = match f.raw("verdict")? {
                    "Consensus" => Verdict::Consensus {
                        output: f.text("output")?,
                        state: f.text("state")?,
                    },
                    "Anomaly" => Verdict::Anomaly(parse_divergence(&f)?),
                    "Inconclusive" => Verdict::Inconclusive {
                        received: f.parse("received")?,
                        needed: f.parse("needed")?,
                    },
                    other => return Err(ParseError::BadValue("verdict", other.to_string())),
                };
                Entry::Verdict {
                    instance: f.parse("instance")?,
                    verdict,
                }
            }
            "AnomalyReport" => Entry::AnomalyReport {
                instance: f.parse("instance")?,
                divergence: parse_divergence(&f)?,
            },
            "Halt" => Entry::Halt {
                reason: f.text("reason")?,
            },
            "End" => Entry::End {
                requests: f.parse("requests")?,
                horizon: f.parse("horizon")?,
            },
            other => {
                let (from, to, packet) = packet_of(other.parse()?)?;
                Entry::Packet { from, to, packet }
            }
        };
        Ok(Record { time, seq, entry })
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut line = format!("time={} seq={} kind={}", self.time, self.seq, self.entry.kind());
        for (k, v) in self.fields() {
            let _ = write!(line, " {k}={v}");
        }
        f.write_str(&line)
    }
}

/// Append-only record sink that assigns `seq` numbers.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    records: Vec<Record>,
}

impl EventLog {
    pub fn push(&mut self, time: Time, entry: Entry) {
        let seq = self.records.len() as u64;
        self.records.push(Record { time, seq, entry });
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    /// The full log as text, one record per line.
    pub fn render(&self) -> String {
        render(&self.records)
    }
}

pub fn render(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{r}");
    }
    out
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("line {line}: {source}")]
pub struct LogParseError {
    pub line: usize,
    #[source]
    pub source: ParseError,
}

pub fn parse_log(text: &str) -> Result<Vec<Record>, LogParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Record::parse(l).map_err(|source| LogParseError { line: i + 1, source }))
        .collect()
}
