//! Deterministic discrete-event network.
//!
//! Simulated time is an integer. Events sit in a priority queue ordered by
//! `(time, seq)`, where `seq` is handed out at scheduling time. The only
//! source of randomness is one ChaCha generator seeded from the scenario;
//! it is drawn from only inside [`Network::send`], once for loss and, when
//! jitter is configured, once more for the extra delay.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{Entry, EventLog};
use crate::messages::{Address, ClientRequest, NodeId, Packet, ProposalNumber};

pub type Time = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event queue is empty")]
    QueueEmpty,
    #[error("fault targets unknown node {0}")]
    UnknownNode(NodeId),
    #[error("fault scheduled at {at} but the clock is already at {now}")]
    FaultInPast { at: Time, now: Time },
}

/// Extra latency on the link between two acceptors, in both directions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDelay {
    pub between: [u32; 2],
    pub delay: Time,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_base_delay")]
    pub base_delay: Time,
    #[serde(default)]
    pub jitter: Time,
    #[serde(default)]
    pub loss_rate: f64,
    /// Per-link base delay overrides.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkDelay>,
}

fn default_base_delay() -> Time {
    1
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            base_delay: default_base_delay(),
            jitter: 0,
            loss_rate: 0.0,
            links: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FaultKind {
    Crash,
    Compromise {
        /// Forced output per exact request payload.
        overrides: BTreeMap<String, String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub at: Time,
    pub target: NodeId,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Timer {
    Heartbeat,
    FailureCheck,
    PrepareTimeout { request_id: u64, n: ProposalNumber },
    Retransmit { request_id: u64, n: ProposalNumber },
    Deadline { instance: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventKind {
    Deliver {
        from: Address,
        to: Address,
        packet: Packet,
    },
    Timer {
        owner: Address,
        timer: Timer,
    },
    Fault(FaultSpec),
    ClientArrival(ClientRequest),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub time: Time,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug)]
pub struct Network {
    config: NetConfig,
    rng: ChaCha8Rng,
    node_count: u32,
    now: Time,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Event>>,
    pub log: EventLog,
    drops: u64,
}

impl Network {
    pub fn new(config: NetConfig, node_count: u32) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            config,
            rng,
            node_count,
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            log: EventLog::default(),
            drops: 0,
        }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn peek_time(&self) -> Option<Time> {
        self.queue.peek().map(|Reverse(e)| e.time)
    }

    pub fn record(&mut self, entry: Entry) {
        self.log.push(self.now, entry);
    }

    pub fn schedule(&mut self, at: Time, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { time: at, seq, kind }));
        seq
    }

    pub fn set_timer(&mut self, owner: Address, timer: Timer, after: Time) {
        let at = self.now + after;
        self.schedule(at, EventKind::Timer { owner, timer });
    }

    fn link_delay(&self, from: Address, to: Address) -> Time {
        if let (Address::Node(a), Address::Node(b)) = (from, to) {
            let pair = [a.0.min(b.0), a.0.max(b.0)];
            if let Some(link) = self
                .config
                .links
                .iter()
                .find(|l| [l.between[0].min(l.between[1]), l.between[0].max(l.between[1])] == pair)
            {
                return link.delay;
            }
        }
        self.config.base_delay
    }

    /// Puts `packet` on the wire. Returns the delivery time, or `None` when
    /// the packet was lost.
    pub fn send(&mut self, packet: Packet, from: Address, to: Address) -> Option<Time> {
        let roll: f64 = self.rng.gen();
        if roll < self.config.loss_rate {
            self.drops += 1;
            self.record(Entry::Drop { from, to, packet });
            return None;
        }
        let jitter = if self.config.jitter > 0 {
            self.rng.gen_range(0..=self.config.jitter)
        } else {
            0
        };
        let at = self.now + self.link_delay(from, to) + jitter;
        self.schedule(at, EventKind::Deliver { from, to, packet });
        Some(at)
    }

    pub fn inject(&mut self, fault: FaultSpec) -> Result<(), SimError> {
        if fault.target.0 >= self.node_count {
            return Err(SimError::UnknownNode(fault.target));
        }
        if fault.at < self.now {
            return Err(SimError::FaultInPast {
                at: fault.at,
                now: self.now,
            });
        }
        self.schedule(fault.at, EventKind::Fault(fault));
        Ok(())
    }

    /// Removes the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Result<Event, SimError> {
        let Reverse(event) = self.queue.pop().ok_or(SimError::QueueEmpty)?;
        self.now = event.time;
        Ok(event)
    }
}
