//! Leader logic.
//!
//! The proposer drives one instance at a time, in `request_id` order. Each
//! instance goes through a prepare round; once a majority of the believed
//! membership has promised, the proposer sends accept requests and waits
//! until every current member has acknowledged the instance before starting
//! the next one. Members that are behind are fed the instances they are
//! missing, stamped with the current proposal number.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::messages::{ClientRequest, NodeId, Packet, ProposalNumber};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProposerError {
    #[error("membership is empty")]
    ZeroMembership,
    #[error("request {0} is already decided or in flight")]
    DuplicateRequest(u64),
    #[error("no in-flight proposal numbered {0} is collecting promises")]
    UnknownProposal(ProposalNumber),
}

/// Smallest number of members that forms a majority.
pub fn majority_threshold(membership_size: usize) -> Result<usize, ProposerError> {
    if membership_size == 0 {
        return Err(ProposerError::ZeroMembership);
    }
    Ok(membership_size / 2 + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Preparing,
    Accepting,
    Decided,
}

#[derive(Clone, Debug)]
pub struct InFlight {
    pub n: ProposalNumber,
    pub request: ClientRequest,
    pub promises: BTreeMap<NodeId, Option<ProposalNumber>>,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProposerAction {
    Send {
        to: NodeId,
        packet: Packet,
    },
    ArmPrepareTimeout {
        request_id: u64,
        n: ProposalNumber,
    },
    ArmRetransmit {
        request_id: u64,
        n: ProposalNumber,
    },
    /// A new instance starts collecting promises.
    Propose {
        request_id: u64,
        n: ProposalNumber,
    },
    Repropose {
        request_id: u64,
        old: ProposalNumber,
        n: ProposalNumber,
    },
    MajorityReached {
        request_id: u64,
        n: ProposalNumber,
        promises: usize,
        membership: usize,
    },
    /// Every current member has executed the instance.
    Completed {
        request_id: u64,
    },
}

#[derive(Clone, Debug)]
pub struct ProposerState {
    pub id: NodeId,
    pub epoch: u64,
    next_round: u64,
    membership: BTreeSet<NodeId>,
    in_flight: BTreeMap<u64, InFlight>,
    pending: BTreeMap<u64, ClientRequest>,
    /// Requests this proposer can replay to lagging members, by instance.
    history: BTreeMap<u64, ClientRequest>,
    /// Per member: the next instance it still has to acknowledge.
    acked: BTreeMap<NodeId, u64>,
    /// Highest proposal number seen in any promise or other traffic.
    observed: Option<ProposalNumber>,
    cursor: u64,
}

impl ProposerState {
    /// A proposer that starts fresh (`history` empty) or takes over after an
    /// election, in which case `history` is the new leader's own execution
    /// log and `next_round` lies above every round it has seen.
    pub fn new(
        id: NodeId,
        epoch: u64,
        membership: BTreeSet<NodeId>,
        next_round: u64,
        history: impl IntoIterator<Item = ClientRequest>,
    ) -> Self {
        let history: BTreeMap<u64, ClientRequest> =
            history.into_iter().map(|r| (r.request_id, r)).collect();
        let cursor = history.len() as u64;
        Self {
            id,
            epoch,
            next_round,
            membership,
            in_flight: BTreeMap::new(),
            pending: BTreeMap::new(),
            history,
            acked: BTreeMap::new(),
            observed: None,
            cursor,
        }
    }

    pub fn membership(&self) -> &BTreeSet<NodeId> {
        &self.membership
    }

    pub fn next_round(&self) -> u64 {
        self.next_round
    }

    /// Next instance this proposer will drive.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn in_flight(&self, request_id: u64) -> Option<&InFlight> {
        self.in_flight.get(&request_id)
    }

    /// The instance currently being prepared or accepted.
    pub fn active(&self) -> Option<&InFlight> {
        self.in_flight
            .get(&self.cursor)
            .filter(|f| f.phase != Phase::Decided)
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Records a proposal number seen anywhere in this node's traffic.
    pub fn observe(&mut self, n: ProposalNumber) {
        if self.observed.is_none_or(|o| n > o) {
            self.observed = Some(n);
        }
    }

    fn member_promises(&self, flight: &InFlight) -> usize {
        flight
            .promises
            .keys()
            .filter(|id| self.membership.contains(id))
            .count()
    }

    fn majority(&self) -> Option<usize> {
        majority_threshold(self.membership.len()).ok()
    }

    fn allocate(&mut self) -> ProposalNumber {
        let n = ProposalNumber::new(self.next_round, self.id);
        self.next_round += 1;
        n
    }

    fn broadcast_prepare(&self, n: ProposalNumber, request: &ClientRequest) -> Vec<ProposerAction> {
        let mut out: Vec<_> = self
            .membership
            .iter()
            .map(|&to| ProposerAction::Send {
                to,
                packet: Packet::Prepare {
                    n,
                    epoch: self.epoch,
                    request: request.clone(),
                },
            })
            .collect();
        out.push(ProposerAction::ArmPrepareTimeout {
            request_id: request.request_id,
            n,
        });
        out
    }

    pub fn on_client_request(&mut self, r: ClientRequest) -> Result<Vec<ProposerAction>, ProposerError> {
        if r.request_id < self.cursor
            || self.in_flight.contains_key(&r.request_id)
            || self.pending.contains_key(&r.request_id)
        {
            return Err(ProposerError::DuplicateRequest(r.request_id));
        }
        self.pending.insert(r.request_id, r);
        Ok(self.advance())
    }

    /// Starts the instance at the cursor if it is idle and its request is known.
    fn advance(&mut self) -> Vec<ProposerAction> {
        if self.active().is_some() {
            return Vec::new();
        }
        let Some(request) = self.pending.remove(&self.cursor) else {
            return Vec::new();
        };
        let n = self.allocate();
        let mut actions = vec![ProposerAction::Propose {
            request_id: request.request_id,
            n,
        }];
        actions.extend(self.broadcast_prepare(n, &request));
        self.in_flight.insert(
            request.request_id,
            InFlight {
                n,
                request,
                promises: BTreeMap::new(),
                phase: Phase::Preparing,
            },
        );
        actions
    }

    pub fn on_promise(
        &mut self,
        n: ProposalNumber,
        last_served: Option<ProposalNumber>,
        from: NodeId,
    ) -> Result<Vec<ProposerAction>, ProposerError> {
        self.observe(n);
        if let Some(l) = last_served {
            self.observe(l);
        }
        let cursor = self.cursor;
        let flight = self
            .in_flight
            .get_mut(&cursor)
            .filter(|f| f.n == n && f.phase == Phase::Preparing)
            .ok_or(ProposerError::UnknownProposal(n))?;
        if flight.promises.contains_key(&from) {
            return Ok(Vec::new());
        }
        flight.promises.insert(from, last_served);
        Ok(self.check_majority())
    }

    fn check_majority(&mut self) -> Vec<ProposerAction> {
        let Some(flight) = self.in_flight.get(&self.cursor) else {
            return Vec::new();
        };
        if flight.phase != Phase::Preparing {
            return Vec::new();
        }
        let count = self.member_promises(flight);
        match self.majority() {
            Some(needed) if count >= needed => self.begin_accepting(count),
            _ => Vec::new(),
        }
    }

    fn begin_accepting(&mut self, promises: usize) -> Vec<ProposerAction> {
        let flight = self.in_flight.get_mut(&self.cursor).expect("active instance");
        flight.phase = Phase::Accepting;
        let (n, request) = (flight.n, flight.request.clone());
        self.history.insert(request.request_id, request.clone());
        let mut out = vec![ProposerAction::MajorityReached {
            request_id: request.request_id,
            n,
            promises,
            membership: self.membership.len(),
        }];
        let members: Vec<NodeId> = self.membership.iter().copied().collect();
        for m in members {
            out.extend(self.accept_for(m));
        }
        out.push(ProposerAction::ArmRetransmit {
            request_id: request.request_id,
            n,
        });
        out
    }

    /// The accept request member `m` needs next, if it is behind the cursor.
    fn accept_for(&self, m: NodeId) -> Option<ProposerAction> {
        let flight = self
            .in_flight
            .get(&self.cursor)
            .filter(|f| f.phase == Phase::Accepting)?;
        let need = self.acked.get(&m).copied().unwrap_or(0);
        if need > self.cursor {
            return None;
        }
        let request = self.history.get(&need)?.clone();
        Some(ProposerAction::Send {
            to: m,
            packet: Packet::AcceptRequest {
                n: flight.n,
                epoch: self.epoch,
                request,
            },
        })
    }

    pub fn on_accepted(&mut self, from: NodeId, request_id: u64) -> Vec<ProposerAction> {
        let need = self.acked.entry(from).or_insert(0);
        if request_id + 1 > *need {
            *need = request_id + 1;
        }
        let mut out: Vec<_> = self.accept_for(from).into_iter().collect();
        out.extend(self.check_complete());
        out
    }

    fn check_complete(&mut self) -> Vec<ProposerAction> {
        let cursor = self.cursor;
        let done = match self.in_flight.get(&cursor) {
            Some(f) if f.phase == Phase::Accepting => self
                .membership
                .iter()
                .all(|m| self.acked.get(m).is_some_and(|&need| need > cursor)),
            _ => false,
        };
        if !done {
            return Vec::new();
        }
        if let Some(f) = self.in_flight.get_mut(&cursor) {
            f.phase = Phase::Decided;
        }
        self.cursor += 1;
        let mut out = vec![ProposerAction::Completed { request_id: cursor }];
        out.extend(self.advance());
        out
    }

    pub fn on_prepare_timeout(&mut self, request_id: u64, n: ProposalNumber) -> Vec<ProposerAction> {
        let stalled = self
            .in_flight
            .get(&request_id)
            .is_some_and(|f| f.n == n && f.phase == Phase::Preparing);
        if !stalled {
            return Vec::new();
        }
        let mut top = self.next_round.saturating_sub(1);
        if let Some(o) = self.observed {
            top = top.max(o.round);
        }
        self.next_round = top + 1;
        let fresh = self.allocate();
        let flight = self.in_flight.get_mut(&request_id).expect("stalled instance");
        flight.n = fresh;
        flight.promises.clear();
        let request = flight.request.clone();
        let mut out = vec![ProposerAction::Repropose {
            request_id,
            old: n,
            n: fresh,
        }];
        out.extend(self.broadcast_prepare(fresh, &request));
        out
    }

    pub fn on_retransmit(&mut self, request_id: u64, n: ProposalNumber) -> Vec<ProposerAction> {
        let live = self
            .in_flight
            .get(&request_id)
            .is_some_and(|f| f.n == n && f.phase == Phase::Accepting);
        if !live {
            return Vec::new();
        }
        let members: Vec<NodeId> = self.membership.iter().copied().collect();
        let mut out: Vec<_> = members.into_iter().filter_map(|m| self.accept_for(m)).collect();
        out.push(ProposerAction::ArmRetransmit { request_id, n });
        out
    }

    pub fn on_membership_change(&mut self, new_membership: BTreeSet<NodeId>) -> Vec<ProposerAction> {
        if new_membership == self.membership {
            return Vec::new();
        }
        let joined: Vec<NodeId> = new_membership
            .difference(&self.membership)
            .copied()
            .collect();
        self.membership = new_membership;
        let membership = &self.membership;
        for flight in self.in_flight.values_mut() {
            if flight.phase == Phase::Preparing {
                flight.promises.retain(|id, _| membership.contains(id));
            }
        }
        let mut out = self.check_majority();
        for m in joined {
            out.extend(self.accept_for(m));
        }
        out.extend(self.check_complete());
        out
    }
}
