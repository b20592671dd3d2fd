//! Group membership over the acceptors: heartbeat failure detection and
//! leader election.
//!
//! The leader is always the smallest live node id. Every leader change bumps
//! the epoch, and proposer packets carry the epoch so replicas can ignore a
//! deposed leader.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::messages::NodeId;
use crate::simnet::Time;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MembershipError {
    #[error("node {0} is not a member of this scenario")]
    UnknownNode(NodeId),
    #[error("no live members left to elect")]
    EmptyGroup,
    #[error("suspicion timeout must be positive")]
    ZeroSuspicion,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MembershipView {
    pub epoch: u64,
    pub alive: BTreeSet<NodeId>,
    pub leader: NodeId,
    pub last_heartbeat: BTreeMap<NodeId, Time>,
    members: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FailureCheck {
    pub failed: BTreeSet<NodeId>,
    /// `(epoch, leader)` when the leader was among the failed nodes.
    pub election: Option<(u64, NodeId)>,
}

impl MembershipView {
    /// All `n` nodes alive as of `now`, node 0 leading epoch 0.
    pub fn new(n: u32, now: Time) -> Self {
        let members: BTreeSet<NodeId> = (0..n).map(NodeId).collect();
        Self {
            epoch: 0,
            alive: members.clone(),
            leader: NodeId(0),
            last_heartbeat: members.iter().map(|&m| (m, now)).collect(),
            members,
        }
    }

    pub fn members(&self) -> &BTreeSet<NodeId> {
        &self.members
    }

    /// Returns true when the heartbeat brings a suspected node back.
    pub fn record_heartbeat(&mut self, from: NodeId, now: Time) -> Result<bool, MembershipError> {
        if !self.members.contains(&from) {
            return Err(MembershipError::UnknownNode(from));
        }
        let stamp = self.last_heartbeat.entry(from).or_insert(now);
        *stamp = (*stamp).max(now);
        Ok(self.alive.insert(from))
    }

    pub fn detect_failures(&mut self, now: Time, suspect_after: Time) -> Result<FailureCheck, MembershipError> {
        if suspect_after == 0 {
            return Err(MembershipError::ZeroSuspicion);
        }
        let failed: BTreeSet<NodeId> = self
            .alive
            .iter()
            .copied()
            .filter(|id| {
                let last = self.last_heartbeat.get(id).copied().unwrap_or(0);
                now.saturating_sub(last) > suspect_after
            })
            .collect();
        for id in &failed {
            self.alive.remove(id);
        }
        let election = if failed.contains(&self.leader) {
            Some(self.elect_leader()?)
        } else {
            None
        };
        Ok(FailureCheck { failed, election })
    }

    pub fn elect_leader(&mut self) -> Result<(u64, NodeId), MembershipError> {
        let leader = *self.alive.first().ok_or(MembershipError::EmptyGroup)?;
        self.leader = leader;
        self.epoch += 1;
        Ok((self.epoch, leader))
    }
}
