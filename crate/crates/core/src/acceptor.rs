//! Replica logic.
//!
//! An acceptor promises any proposal numbered above everything it has
//! promised before, and on an accept request runs the application, steps its
//! state machine and reports `[N, output, new state]`. Requests are executed
//! strictly in `request_id` order; an accept request for an instance the
//! replica has already executed is answered from its execution log, so a
//! replica never runs the same request twice.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::messages::{Address, ClientRequest, NodeId, Packet, ProposalNumber};
use crate::statemachine::{apply, execute, AppModel, RuntimeState, StateMachineDef};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Executed {
    pub request: ClientRequest,
    pub output: String,
    pub new_state: String,
}

#[derive(Clone, Debug)]
pub struct AcceptorState {
    pub id: NodeId,
    pub highest_promised: Option<ProposalNumber>,
    pub last_served: Option<ProposalNumber>,
    pub machine: RuntimeState,
    pub model: AppModel,
    /// Forced outputs keyed by exact payload. Present only on a compromised
    /// replica; payloads missing from the table fall through to `model`.
    pub compromised: Option<BTreeMap<String, String>>,
    /// Highest leadership epoch this replica has been told about.
    pub epoch: u64,
    executed: Vec<Executed>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AcceptError {
    #[error("accept request {got} is below promised {promised}")]
    StaleAccept {
        got: ProposalNumber,
        promised: ProposalNumber,
    },
    #[error("packet from epoch {got}, replica is at epoch {current}")]
    StaleEpoch { got: u64, current: u64 },
    #[error("instance {got} arrived before instance {expected} was executed")]
    Gap { expected: u64, got: u64 },
}

/// The Accepted tuple and where it goes: the issuing proposer and the learner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AcceptedReply {
    pub packet: Packet,
    pub to: [Address; 2],
    /// Whether this call ran the request, as opposed to replaying the log.
    pub fresh: bool,
}

impl AcceptorState {
    pub fn new(id: NodeId, def: &StateMachineDef, model: AppModel) -> Self {
        Self {
            id,
            highest_promised: None,
            last_served: None,
            machine: def.initial(),
            model,
            compromised: None,
            epoch: 0,
            executed: Vec::new(),
        }
    }

    pub fn compromise(&mut self, overrides: BTreeMap<String, String>) {
        self.compromised = Some(overrides);
    }

    /// Index of the next request this replica will execute.
    pub fn next_instance(&self) -> u64 {
        self.executed.len() as u64
    }

    pub fn executed(&self) -> &[Executed] {
        &self.executed
    }

    pub fn on_prepare(&mut self, n: ProposalNumber, epoch: u64) -> Option<Packet> {
        if epoch < self.epoch {
            return None;
        }
        self.epoch = epoch;
        if self.highest_promised.is_some_and(|h| n <= h) {
            return None;
        }
        self.highest_promised = Some(n);
        Some(Packet::Promise {
            n,
            last_served: self.last_served,
            from: self.id,
        })
    }

    fn run(&self, request: &ClientRequest) -> String {
        if let Some(out) = self
            .compromised
            .as_ref()
            .and_then(|table| table.get(&request.payload))
        {
            return out.clone();
        }
        execute(&self.model, request)
    }

    pub fn on_accept_request(
        &mut self,
        def: &StateMachineDef,
        n: ProposalNumber,
        epoch: u64,
        request: &ClientRequest,
    ) -> Result<AcceptedReply, AcceptError> {
        if epoch < self.epoch {
            return Err(AcceptError::StaleEpoch {
                got: epoch,
                current: self.epoch,
            });
        }
        if let Some(promised) = self.highest_promised.filter(|h| n < *h) {
            return Err(AcceptError::StaleAccept { got: n, promised });
        }
        let expected = self.next_instance();
        if request.request_id > expected {
            return Err(AcceptError::Gap {
                expected,
                got: request.request_id,
            });
        }
        self.epoch = epoch;
        self.highest_promised = Some(n);
        self.last_served = Some(n);

        let fresh = request.request_id == expected;
        if fresh {
            let output = self.run(request);
            self.machine = apply(def, &self.machine, &request.payload, &output);
            self.executed.push(Executed {
                request: request.clone(),
                output,
                new_state: self.machine.current.clone(),
            });
        }
        let entry = &self.executed[request.request_id as usize];
        Ok(AcceptedReply {
            packet: Packet::Accepted {
                n,
                request_id: request.request_id,
                output: entry.output.clone(),
                new_state: entry.new_state.clone(),
                from: self.id,
            },
            to: [Address::Node(n.proposer), Address::Learner],
            fresh,
        })
    }
}
