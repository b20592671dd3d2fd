//! The event loop that wires acceptors, the proposer, the learner and the
//! membership service to the simulated network.
//!
//! Client arrivals and fault events come from the scenario. Everything else
//! is a reaction: packet deliveries, heartbeats, failure checks and the
//! proposer and learner timers. Periodic timers stop re-arming once the run
//! is idle (see [`Simulation::is_idle`]), which is what lets a run reach an
//! empty queue.

use std::collections::{BTreeMap, BTreeSet};

use crate::acceptor::AcceptorState;
use crate::eventlog::{Entry, EventLog, Record};
use crate::learner::{Decision, Divergence, Learner, Tuple, Verdict};
use crate::membership::{MembershipError, MembershipView};
use crate::messages::{Address, ClientRequest, NodeId, Packet};
use crate::proposer::{ProposerAction, ProposerState};
use crate::scenario::Scenario;
use crate::simnet::{Event, EventKind, FaultKind, FaultSpec, Network, SimError, Time, Timer};

/// Round the first leader starts from.
const FIRST_ROUND: u64 = 1;

#[derive(Clone, Debug)]
pub struct Node {
    pub acceptor: AcceptorState,
    pub proposer: Option<ProposerState>,
    pub crashed: bool,
    /// Highest round this node has sent or received.
    round_floor: u64,
    heartbeat_seq: u64,
}

impl Node {
    fn see(&mut self, round: u64) {
        self.round_floor = self.round_floor.max(round);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub reproposals: u64,
    pub elections: u64,
}

#[derive(Debug)]
pub struct Simulation {
    scenario: Scenario,
    net: Network,
    nodes: Vec<Node>,
    learner: Learner,
    view: MembershipView,
    requests: Vec<ClientRequest>,
    arrived: BTreeSet<u64>,
    /// Instances some proposer saw every member execute.
    completed: BTreeSet<u64>,
    /// Arrivals and faults not yet processed.
    scheduled_external: usize,
    verdicts: BTreeMap<u64, Verdict>,
    anomalies: Vec<(u64, Divergence)>,
    counters: Counters,
    halted: Option<String>,
    horizon_reached: bool,
    finished: bool,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Self {
        let cfg = &scenario.config;
        let n = cfg.acceptors;
        let mut net = Network::new(cfg.net.clone(), n);
        net.record(Entry::Start {
            scenario: cfg.name.clone(),
            acceptors: n,
            seed: cfg.net.seed,
            policy: cfg.anomaly_policy,
        });
        let view = MembershipView::new(n, 0);
        let mut nodes: Vec<Node> = (0..n)
            .map(|i| Node {
                acceptor: AcceptorState::new(NodeId(i), &scenario.machine, scenario.app.clone()),
                proposer: None,
                crashed: false,
                round_floor: 0,
                heartbeat_seq: 0,
            })
            .collect();
        nodes[0].proposer = Some(ProposerState::new(
            NodeId(0),
            0,
            view.alive.clone(),
            FIRST_ROUND,
            [],
        ));

        for fault in &cfg.faults {
            net.inject(fault.clone()).expect("scenario validated");
        }
        let requests = scenario.requests();
        for (spec, request) in cfg.requests.iter().zip(&requests) {
            net.schedule(spec.at, EventKind::ClientArrival(request.clone()));
        }
        for i in 0..n {
            net.schedule(
                0,
                EventKind::Timer {
                    owner: Address::Node(NodeId(i)),
                    timer: Timer::Heartbeat,
                },
            );
        }
        net.schedule(
            cfg.timing.heartbeat_interval,
            EventKind::Timer {
                owner: Address::Membership,
                timer: Timer::FailureCheck,
            },
        );

        let learner = Learner::new(cfg.anomaly_policy, n as usize);
        let scheduled_external = cfg.faults.len() + requests.len();
        Self {
            scenario,
            net,
            nodes,
            learner,
            view,
            requests,
            arrived: BTreeSet::new(),
            completed: BTreeSet::new(),
            scheduled_external,
            verdicts: BTreeMap::new(),
            anomalies: Vec::new(),
            counters: Counters::default(),
            halted: None,
            horizon_reached: false,
            finished: false,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> Time {
        self.net.now()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn view(&self) -> &MembershipView {
        &self.view
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn verdicts(&self) -> &BTreeMap<u64, Verdict> {
        &self.verdicts
    }

    pub fn anomalies(&self) -> &[(u64, Divergence)] {
        &self.anomalies
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn drops(&self) -> u64 {
        self.net.drops()
    }

    pub fn halted(&self) -> Option<&str> {
        self.halted.as_deref()
    }

    pub fn horizon_reached(&self) -> bool {
        self.horizon_reached
    }

    pub fn requests(&self) -> &[ClientRequest] {
        &self.requests
    }

    pub fn log(&self) -> &EventLog {
        &self.net.log
    }

    pub fn records(&self) -> &[Record] {
        self.net.log.records()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// No scenario events remain and every arrived request is either
    /// decided or fully executed. A completed instance without a verdict
    /// lost its reports to the learner; nothing can resend them, so it is
    /// left for the closing pass to mark inconclusive.
    pub fn is_idle(&self) -> bool {
        self.scheduled_external == 0
            && self
                .arrived
                .iter()
                .all(|id| self.verdicts.contains_key(id) || self.completed.contains(id))
    }

    /// Processes the earliest pending event.
    pub fn step(&mut self) -> Result<Event, SimError> {
        let event = self.net.pop()?;
        self.dispatch(event.kind.clone());
        Ok(event)
    }

    /// Processes every event up to and including time `t`.
    pub fn run_until(&mut self, t: Time) -> Time {
        while self.halted.is_none() && self.net.peek_time().is_some_and(|next| next <= t) {
            let _ = self.step();
        }
        self.now()
    }

    /// Runs until the queue drains, the group halts or the scenario horizon
    /// passes. Returns the final time.
    pub fn run_to_quiescence(&mut self) -> Time {
        let horizon = self.scenario.config.horizon;
        self.run_until(horizon);
        if self.halted.is_none() && !self.net.is_empty() {
            self.horizon_reached = true;
        }
        self.now()
    }

    /// Runs to quiescence, then closes every undecided instance as
    /// inconclusive and writes the closing record.
    pub fn run(&mut self) {
        self.run_to_quiescence();
        self.finish();
    }

    pub fn finish(&mut self) {
        if self.finished {
            return;
        }
        self.finished = true;
        let ids: Vec<u64> = self.requests.iter().map(|r| r.request_id).collect();
        for decision in self.learner.finalize(ids) {
            self.on_decision(decision);
        }
        self.net.record(Entry::End {
            requests: self.requests.len() as u64,
            horizon: self.horizon_reached,
        });
    }

    /// True when the horizon cut the run short with requests still open.
    pub fn livelocked(&self) -> bool {
        self.horizon_reached
            && self
                .verdicts
                .values()
                .any(|v| matches!(v, Verdict::Inconclusive { .. }))
    }

    pub fn into_log(self) -> EventLog {
        self.net.log
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::ClientArrival(request) => {
                self.scheduled_external -= 1;
                self.on_arrival(request);
            }
            EventKind::Fault(fault) => {
                self.scheduled_external -= 1;
                self.on_fault(fault);
            }
            EventKind::Deliver { from, to, packet } => self.on_deliver(from, to, packet),
            EventKind::Timer { owner, timer } => self.on_timer(owner, timer),
        }
    }

    fn on_arrival(&mut self, request: ClientRequest) {
        self.arrived.insert(request.request_id);
        let leader = self.view.leader;
        self.net.record(Entry::ClientArrival {
            request: request.clone(),
            leader,
        });
        self.submit(leader, request);
    }

    /// Hands a request to `leader`'s proposer. A crashed leader loses it;
    /// the client resubmits after the next election.
    fn submit(&mut self, leader: NodeId, request: ClientRequest) {
        let node = &mut self.nodes[leader.0 as usize];
        if node.crashed {
            return;
        }
        let Some(proposer) = node.proposer.as_mut() else {
            return;
        };
        if let Ok(actions) = proposer.on_client_request(request) {
            self.perform(leader, actions);
        }
    }

    fn on_fault(&mut self, fault: FaultSpec) {
        let node = &mut self.nodes[fault.target.0 as usize];
        match fault.kind {
            FaultKind::Crash => {
                node.crashed = true;
                self.net.record(Entry::Crash { node: fault.target });
            }
            FaultKind::Compromise { overrides } => {
                node.acceptor.compromise(overrides);
                self.net.record(Entry::Compromise { node: fault.target });
            }
        }
    }

    fn on_deliver(&mut self, from: Address, to: Address, packet: Packet) {
        if let Address::Node(id) = to {
            if self.nodes[id.0 as usize].crashed {
                self.net.record(Entry::DiscardCrashed { from, to, packet });
                return;
            }
        }
        self.net.record(Entry::Packet {
            from,
            to,
            packet: packet.clone(),
        });
        match to {
            Address::Node(id) => self.node_receive(id, packet),
            Address::Learner => self.learner_receive(packet),
            Address::Membership => {
                if let Packet::Heartbeat { from, .. } = packet {
                    self.on_heartbeat(from);
                }
            }
            Address::Client => {}
        }
    }

    fn node_receive(&mut self, id: NodeId, packet: Packet) {
        let def = &self.scenario.machine;
        let node = &mut self.nodes[id.0 as usize];
        let seen = match &packet {
            Packet::Prepare { n, .. } | Packet::AcceptRequest { n, .. } | Packet::Accepted { n, .. } => Some(*n),
            Packet::Promise { n, last_served, .. } => Some(last_served.map_or(*n, |l| l.max(*n))),
            _ => None,
        };
        if let Some(n) = seen {
            node.see(n.round);
            if let Some(p) = node.proposer.as_mut() {
                p.observe(n);
            }
        }
        match packet {
            Packet::Prepare { n, epoch, .. } => {
                if let Some(promise) = node.acceptor.on_prepare(n, epoch) {
                    self.net.send(promise, Address::Node(id), Address::Node(n.proposer));
                }
            }
            Packet::AcceptRequest { n, epoch, request } => {
                if let Ok(reply) = node.acceptor.on_accept_request(def, n, epoch, &request) {
                    for to in reply.to {
                        self.net.send(reply.packet.clone(), Address::Node(id), to);
                    }
                }
            }
            Packet::Promise { n, last_served, from } => {
                let actions = node
                    .proposer
                    .as_mut()
                    .and_then(|p| p.on_promise(n, last_served, from).ok())
                    .unwrap_or_default();
                self.perform(id, actions);
            }
            Packet::Accepted { request_id, from, .. } => {
                let actions = node
                    .proposer
                    .as_mut()
                    .map(|p| p.on_accepted(from, request_id))
                    .unwrap_or_default();
                self.perform(id, actions);
            }
            Packet::Heartbeat { .. } | Packet::ClientResponse { .. } => {}
        }
    }

    fn learner_receive(&mut self, packet: Packet) {
        let Packet::Accepted {
            n,
            request_id,
            output,
            new_state,
            from,
        } = packet
        else {
            return;
        };
        let outcome = self.learner.on_accepted(request_id, from, Tuple { n, output, new_state });
        if outcome.arm_deadline {
            self.net.set_timer(
                Address::Learner,
                Timer::Deadline { instance: request_id },
                self.scenario.config.timing.instance_deadline,
            );
        }
        if let Some(decision) = outcome.decision {
            self.on_decision(decision);
        }
    }

    fn on_decision(&mut self, d: Decision) {
        self.net.record(Entry::Verdict {
            instance: d.instance,
            verdict: d.verdict.clone(),
        });
        if let Some(divergence) = d.report {
            self.net.record(Entry::AnomalyReport {
                instance: d.instance,
                divergence: divergence.clone(),
            });
            self.anomalies.push((d.instance, divergence));
        }
        if let Some((request_id, output)) = d.response {
            self.net.record(Entry::Packet {
                from: Address::Learner,
                to: Address::Client,
                packet: Packet::ClientResponse { request_id, output },
            });
        }
        self.verdicts.insert(d.instance, d.verdict);
    }

    fn on_heartbeat(&mut self, from: NodeId) {
        if let Ok(true) = self.view.record_heartbeat(from, self.now()) {
            self.net.record(Entry::Rejoin { node: from });
            self.membership_changed();
        }
    }

    fn on_timer(&mut self, owner: Address, timer: Timer) {
        if let Address::Node(id) = owner {
            if self.nodes[id.0 as usize].crashed {
                return;
            }
        }
        let idle = self.is_idle();
        let timing = self.scenario.config.timing.clone();
        match (owner, timer) {
            (Address::Node(id), Timer::Heartbeat) => {
                if idle {
                    return;
                }
                let node = &mut self.nodes[id.0 as usize];
                let seq = node.heartbeat_seq;
                node.heartbeat_seq += 1;
                self.net
                    .send(Packet::Heartbeat { from: id, seq }, owner, Address::Membership);
                self.net.set_timer(owner, Timer::Heartbeat, timing.heartbeat_interval);
            }
            (Address::Membership, Timer::FailureCheck) => {
                if idle {
                    return;
                }
                self.failure_check();
                if self.halted.is_none() {
                    self.net
                        .set_timer(owner, Timer::FailureCheck, timing.heartbeat_interval);
                }
            }
            (Address::Node(id), Timer::PrepareTimeout { request_id, n }) => {
                if idle {
                    return;
                }
                let actions = self.nodes[id.0 as usize]
                    .proposer
                    .as_mut()
                    .map(|p| p.on_prepare_timeout(request_id, n))
                    .unwrap_or_default();
                self.perform(id, actions);
            }
            (Address::Node(id), Timer::Retransmit { request_id, n }) => {
                if idle {
                    return;
                }
                let actions = self.nodes[id.0 as usize]
                    .proposer
                    .as_mut()
                    .map(|p| p.on_retransmit(request_id, n))
                    .unwrap_or_default();
                self.perform(id, actions);
            }
            (Address::Learner, Timer::Deadline { instance }) => {
                self.net.record(Entry::Deadline { instance });
                if let Some(decision) = self.learner.on_deadline(instance) {
                    self.on_decision(decision);
                }
            }
            _ => {}
        }
    }

    fn failure_check(&mut self) {
        let suspect_after = self.scenario.config.timing.suspect_after;
        let check = match self.view.detect_failures(self.now(), suspect_after) {
            Ok(check) => check,
            Err(e) => {
                self.halt(e);
                return;
            }
        };
        if check.failed.is_empty() {
            return;
        }
        for &node in &check.failed {
            self.net.record(Entry::Failure { node });
        }
        if self.view.alive.is_empty() {
            self.halt(MembershipError::EmptyGroup);
            return;
        }
        self.membership_changed();
        if let Some((epoch, leader)) = check.election {
            self.net.record(Entry::Election { epoch, leader });
            self.counters.elections += 1;
            self.take_over(epoch, leader);
        }
    }

    fn halt(&mut self, reason: MembershipError) {
        let reason = reason.to_string();
        self.net.record(Entry::Halt { reason: reason.clone() });
        self.halted = Some(reason);
    }

    /// Pushes the current live set to the learner and the proposer.
    fn membership_changed(&mut self) {
        let alive = self.view.alive.clone();
        self.net.record(Entry::MembershipChange {
            epoch: self.view.epoch,
            alive: alive.clone(),
        });
        for decision in self.learner.on_membership(alive.len()) {
            self.on_decision(decision);
        }
        let leader = self.view.leader;
        let node = &mut self.nodes[leader.0 as usize];
        if node.crashed {
            return;
        }
        if let Some(p) = node.proposer.as_mut() {
            let actions = p.on_membership_change(alive);
            self.perform(leader, actions);
        }
    }

    fn take_over(&mut self, epoch: u64, leader: NodeId) {
        for node in &mut self.nodes {
            node.proposer = None;
            if !node.crashed {
                node.acceptor.epoch = node.acceptor.epoch.max(epoch);
            }
        }
        let node = &mut self.nodes[leader.0 as usize];
        let history: Vec<ClientRequest> = node
            .acceptor
            .executed()
            .iter()
            .map(|e| e.request.clone())
            .collect();
        let proposer = ProposerState::new(
            leader,
            epoch,
            self.view.alive.clone(),
            node.round_floor + 1,
            history,
        );
        let cursor = proposer.cursor();
        node.proposer = Some(proposer);
        let resubmit: Vec<ClientRequest> = self
            .requests
            .iter()
            .filter(|r| r.request_id >= cursor && self.arrived.contains(&r.request_id))
            .cloned()
            .collect();
        for request in resubmit {
            self.submit(leader, request);
        }
    }

    fn perform(&mut self, id: NodeId, actions: Vec<ProposerAction>) {
        let prepare_timeout = self.scenario.config.timing.prepare_timeout;
        let me = Address::Node(id);
        for action in actions {
            match action {
                ProposerAction::Send { to, packet } => {
                    self.net.send(packet, me, Address::Node(to));
                }
                ProposerAction::ArmPrepareTimeout { request_id, n } => {
                    self.net
                        .set_timer(me, Timer::PrepareTimeout { request_id, n }, prepare_timeout);
                }
                ProposerAction::ArmRetransmit { request_id, n } => {
                    self.net
                        .set_timer(me, Timer::Retransmit { request_id, n }, prepare_timeout);
                }
                ProposerAction::Propose { request_id, n } => {
                    self.nodes[id.0 as usize].see(n.round);
                    self.net.record(Entry::Propose {
                        node: id,
                        request_id,
                        n,
                    });
                }
                ProposerAction::Repropose { request_id, old, n } => {
                    self.nodes[id.0 as usize].see(n.round);
                    self.counters.reproposals += 1;
                    self.net.record(Entry::Repropose {
                        node: id,
                        request_id,
                        old,
                        n,
                    });
                }
                ProposerAction::MajorityReached {
                    request_id,
                    n,
                    promises,
                    membership,
                } => self.net.record(Entry::MajorityReached {
                    node: id,
                    request_id,
                    n,
                    promises,
                    membership,
                }),
                ProposerAction::Completed { request_id } => {
                    self.completed.insert(request_id);
                    self.net.record(Entry::Completed { node: id, request_id });
                }
            }
        }
    }
}
