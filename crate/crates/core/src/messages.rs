//! Protocol values exchanged between nodes.
//!
//! Every packet is an immutable value. Proposal numbers are ordered
//! lexicographically on `(round, proposer)` so two proposers can never emit
//! the same number.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, CONTROLS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identity of an acceptor node. Ids are dense `0..n` within a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(NodeId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProposalNumber {
    pub round: u64,
    pub proposer: NodeId,
}

impl ProposalNumber {
    pub fn new(round: u64, proposer: NodeId) -> Self {
        Self { round, proposer }
    }
}

impl fmt::Display for ProposalNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.round, self.proposer)
    }
}

impl FromStr for ProposalNumber {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (round, proposer) = s
            .split_once('.')
            .ok_or_else(|| ParseError::BadValue("n", s.to_string()))?;
        let round = round
            .parse()
            .map_err(|_| ParseError::BadValue("n", s.to_string()))?;
        let proposer = proposer
            .parse()
            .map_err(|_| ParseError::BadValue("n", s.to_string()))?;
        Ok(Self { round, proposer })
    }
}

/// Total order on proposal numbers: round first, proposer id breaks ties.
pub fn compare_proposal(a: &ProposalNumber, b: &ProposalNumber) -> Ordering {
    a.round
        .cmp(&b.round)
        .then_with(|| a.proposer.cmp(&b.proposer))
}

/// A client request. `request_id` doubles as the consensus instance index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClientRequest {
    pub request_id: u64,
    pub payload: String,
}

impl ClientRequest {
    pub fn new(request_id: u64, payload: impl Into<String>) -> Self {
        Self {
            request_id,
            payload: payload.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Packet {
    Prepare {
        n: ProposalNumber,
        epoch: u64,
        request: ClientRequest,
    },
    Promise {
        n: ProposalNumber,
        last_served: Option<ProposalNumber>,
        from: NodeId,
    },
    AcceptRequest {
        n: ProposalNumber,
        epoch: u64,
        request: ClientRequest,
    },
    /// The `[N, output, new state]` tuple, tagged with the instance it answers.
    Accepted {
        n: ProposalNumber,
        request_id: u64,
        output: String,
        new_state: String,
        from: NodeId,
    },
    Heartbeat {
        from: NodeId,
        seq: u64,
    },
    ClientResponse {
        request_id: u64,
        output: String,
    },
}

impl Packet {
    pub fn kind(&self) -> PacketKind {
        match self {
            Packet::Prepare { .. } => PacketKind::Prepare,
            Packet::Promise { .. } => PacketKind::Promise,
            Packet::AcceptRequest { .. } => PacketKind::AcceptRequest,
            Packet::Accepted { .. } => PacketKind::Accepted,
            Packet::Heartbeat { .. } => PacketKind::Heartbeat,
            Packet::ClientResponse { .. } => PacketKind::ClientResponse,
        }
    }

    /// The sending node recorded inside the packet, if the packet carries one.
    pub fn sender(&self) -> Option<NodeId> {
        match self {
            Packet::Promise { from, .. }
            | Packet::Accepted { from, .. }
            | Packet::Heartbeat { from, .. } => Some(*from),
            Packet::Prepare { n, .. } | Packet::AcceptRequest { n, .. } => Some(n.proposer),
            Packet::ClientResponse { .. } => None,
        }
    }

    /// Packet-specific `key=value` fields of the one-line log form. The
    /// envelope (`from`, `to`) is written by the caller.
    pub fn encode_fields(&self) -> Vec<(&'static str, String)> {
        match self {
            Packet::Prepare { n, epoch, request } | Packet::AcceptRequest { n, epoch, request } => {
                vec![
                    ("n", n.to_string()),
                    ("epoch", epoch.to_string()),
                    ("req", request.request_id.to_string()),
                    ("payload", escape(&request.payload)),
                ]
            }
            Packet::Promise { n, last_served, .. } => vec![
                ("n", n.to_string()),
                (
                    "last",
                    last_served.map_or_else(|| "-".to_string(), |l| l.to_string()),
                ),
            ],
            Packet::Accepted {
                n,
                request_id,
                output,
                new_state,
                ..
            } => vec![
                ("n", n.to_string()),
                ("req", request_id.to_string()),
                ("output", escape(output)),
                ("state", escape(new_state)),
            ],
            Packet::Heartbeat { seq, .. } => vec![("hb", seq.to_string())],
            Packet::ClientResponse { request_id, output } => vec![
                ("req", request_id.to_string()),
                ("output", escape(output)),
            ],
        }
    }

    /// Inverse of [`Packet::encode_fields`]. `from` is the envelope sender,
    /// required for packet kinds that carry their origin.
    pub fn decode_fields(
        kind: PacketKind,
        from: Option<NodeId>,
        fields: &Fields<'_>,
    ) -> Result<Packet, ParseError> {
        let need_from = || from.ok_or(ParseError::Missing("from"));
        Ok(match kind {
            PacketKind::Prepare | PacketKind::AcceptRequest => {
                let n = fields.parse("n")?;
                let epoch = fields.parse("epoch")?;
                let request = ClientRequest {
                    request_id: fields.parse("req")?,
                    payload: fields.text("payload")?,
                };
                if kind == PacketKind::Prepare {
                    Packet::Prepare { n, epoch, request }
                } else {
                    Packet::AcceptRequest { n, epoch, request }
                }
            }
            PacketKind::Promise => {
                let last = fields.raw("last")?;
                let last_served = if last == "-" {
                    None
                } else {
                    Some(last.parse()?)
                };
                Packet::Promise {
                    n: fields.parse("n")?,
                    last_served,
                    from: need_from()?,
                }
            }
            PacketKind::Accepted => Packet::Accepted {
                n: fields.parse("n")?,
                request_id: fields.parse("req")?,
                output: fields.text("output")?,
                new_state: fields.text("state")?,
                from: need_from()?,
            },
            PacketKind::Heartbeat => Packet::Heartbeat {
                from: need_from()?,
                seq: fields.parse("hb")?,
            },
            PacketKind::ClientResponse => Packet::ClientResponse {
                request_id: fields.parse("req")?,
                output: fields.text("output")?,
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PacketKind {
    Prepare,
    Promise,
    AcceptRequest,
    Accepted,
    Heartbeat,
    ClientResponse,
}

impl PacketKind {
    pub const ALL: [PacketKind; 6] = [
        PacketKind::Prepare,
        PacketKind::Promise,
        PacketKind::AcceptRequest,
        PacketKind::Accepted,
        PacketKind::Heartbeat,
        PacketKind::ClientResponse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Prepare => "Prepare",
            PacketKind::Promise => "Promise",
            PacketKind::AcceptRequest => "AcceptRequest",
            PacketKind::Accepted => "Accepted",
            PacketKind::Heartbeat => "Heartbeat",
            PacketKind::ClientResponse => "ClientResponse",
        }
    }
}

impl fmt::Display for PacketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PacketKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PacketKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ParseError::BadValue("kind", s.to_string()))
    }
}

/// Endpoint of a simulated link. Only acceptors are numbered; the learner,
/// the membership service and the client are singletons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Address {
    Node(NodeId),
    Learner,
    Membership,
    Client,
}

impl Address {
    pub fn node(self) -> Option<NodeId> {
        match self {
            Address::Node(id) => Some(id),
            _ => None,
        }
    }
}

impl From<NodeId> for Address {
    fn from(id: NodeId) -> Self {
        Address::Node(id)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Node(id) => write!(f, "{id}"),
            Address::Learner => f.write_str("learner"),
            Address::Membership => f.write_str("membership"),
            Address::Client => f.write_str("client"),
        }
    }
}

impl FromStr for Address {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "learner" => Ok(Address::Learner),
            "membership" => Ok(Address::Membership),
            "client" => Ok(Address::Client),
            _ => s
                .parse()
                .map(Address::Node)
                .map_err(|_| ParseError::BadValue("address", s.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("bad value for `{0}`: {1:?}")]
    BadValue(&'static str, String),
    #[error("malformed token {0:?}")]
    Token(String),
}

// Anything that would break the space-separated `key=value` layout, plus the
// list separators used inside values.
const LOG_ESCAPE: &AsciiSet = &CONTROLS
    .add(b' ')
    .add(b'%')
    .add(b'=')
    .add(b',')
    .add(b':');

pub fn escape(text: &str) -> String {
    utf8_percent_encode(text, LOG_ESCAPE).to_string()
}

pub fn unescape(text: &str) -> Result<String, ParseError> {
    percent_decode_str(text)
        .decode_utf8()
        .map(|s| s.into_owned())
        .map_err(|_| ParseError::BadValue("text", text.to_string()))
}

/// Borrowed view of the `key=value` tokens of one log line.
#[derive(Debug, Default)]
pub struct Fields<'a> {
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    pub fn parse_line(line: &'a str) -> Result<Self, ParseError> {
        let pairs = line
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(|t| t.split_once('=').ok_or_else(|| ParseError::Token(t.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(Self { pairs })
    }

    pub fn get(&self, key: &str) -> Option<&'a str> {
        self.pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    pub fn raw(&self, key: &'static str) -> Result<&'a str, ParseError> {
        self.get(key).ok_or(ParseError::Missing(key))
    }

    pub fn text(&self, key: &'static str) -> Result<String, ParseError> {
        unescape(self.raw(key)?)
    }

    pub fn parse<T: FromStr>(&self, key: &'static str) -> Result<T, ParseError> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| ParseError::BadValue(key, raw.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pn(round: u64, node: u32) -> ProposalNumber {
        ProposalNumber::new(round, NodeId(node))
    }

    #[test]
    fn compare_identity() {
        assert_eq!(compare_proposal(&pn(3, 1), &pn(3, 1)), Ordering::Equal);
    }

    #[test]
    fn compare_matches_tuple_order_exhaustively() {
        // Oracle: plain tuple comparison over rounds 0..=3, nodes 0..=5.
        let all: Vec<_> = (0..=3u64)
            .flat_map(|r| (0..=5u32).map(move |p| (r, p)))
            .collect();
        for &(ra, pa) in &all {
            for &(rb, pb) in &all {
                assert_eq!(
                    compare_proposal(&pn(ra, pa), &pn(rb, pb)),
                    (ra, pa).cmp(&(rb, pb))
                );
            }
        }
        assert_eq!(compare_proposal(&pn(2, 5), &pn(3, 0)), Ordering::Less);
        assert_eq!(compare_proposal(&pn(3, 2), &pn(3, 1)), Ordering::Greater);
    }

    #[test]
    fn derived_ord_agrees_with_compare() {
        assert!(pn(2, 5) < pn(3, 0));
        assert_eq!(pn(4, 1).cmp(&pn(4, 2)), compare_proposal(&pn(4, 1), &pn(4, 2)));
    }

    #[test]
    fn proposal_text_form() {
        assert_eq!(pn(7, 1).to_string(), "7.1");
        assert_eq!("7.1".parse::<ProposalNumber>().unwrap(), pn(7, 1));
        assert!("7".parse::<ProposalNumber>().is_err());
    }

    #[test]
    fn escape_keeps_layout_tokens_out() {
        let s = "GET /a b=c,d:e%f\n";
        let e = escape(s);
        assert!(!e.contains(' ') && !e.contains('=') && !e.contains('\n'));
        assert_eq!(unescape(&e).unwrap(), s);
        assert_eq!(escape("Error|Failure"), "Error|Failure");
    }

    #[test]
    fn address_round_trip() {
        for a in [
            Address::Node(NodeId(4)),
            Address::Learner,
            Address::Membership,
            Address::Client,
        ] {
            assert_eq!(a.to_string().parse::<Address>().unwrap(), a);
        }
    }

    #[test]
    fn promise_without_sender_is_rejected() {
        let fields = Fields::parse_line("n=1.0 last=-").unwrap();
        assert_eq!(
            Packet::decode_fields(PacketKind::Promise, None, &fields),
            Err(ParseError::Missing("from"))
        );
    }
}
