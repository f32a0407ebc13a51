//! Message vocabulary exchanged between overlay nodes.
//!
//! Messages are simulator-internal values, not a network wire format;
//! the simulator delivers them with latency equal to the delay-space
//! distance between the endpoints. Every message digests to a stable
//! 64-bit value for trace lines and golden-trace comparisons.

use std::collections::BTreeSet;

use crate::bloom::{BloomFilter, GroupId};
use crate::node::{Alternates, MemberRecord, NodeId};
use crate::sfc::{Direction, RingCoord};

/// Which joining directions a probe is advancing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirSet {
    Both,
    One(Direction),
}

impl DirSet {
    pub fn contains(self, dir: Direction) -> bool {
        match self {
            DirSet::Both => true,
            DirSet::One(d) => d == dir,
        }
    }
}

/// Why a probe is travelling. Join and repair probes make the terminal
/// node record the prober as a neighbour; resolve probes are pure
/// lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbePurpose {
    Join(DirSet),
    Repair,
    Resolve { token: u64 },
}

/// Bookkeeping that rides along with a query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    pub group: GroupId,
    pub origin: NodeId,
    pub query_id: u64,
    /// Every node the query has visited (origin first).
    pub path: Vec<NodeId>,
    /// Ring distance of each hop taken, in order.
    pub hop_dists: Vec<f64>,
    pub ttl: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryOutcome {
    Found(MemberRecord),
    NotFound { ttl_failure: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Greedily routed toward `target`; the node with no neighbour
    /// closer to the target answers with a `JoinAccept`.
    JoinProbe {
        joiner: NodeId,
        target: RingCoord,
        purpose: ProbePurpose,
        ttl: u32,
        hops: u32,
    },
    /// Terminal node's answer, carrying its own immediate neighbours.
    JoinAccept {
        purpose: ProbePurpose,
        alternates: Alternates,
        hops: u32,
    },
    /// Membership registration, greedily routed to the node whose ring
    /// coordinate is closest to the member's.
    Register {
        member: MemberRecord,
        ttl: u32,
        hops: u32,
    },
    /// Area announcement: the groups reachable through the sender, plus
    /// the sender's immediate neighbours for failure substitution. The
    /// exact `reachable` set shadows the filter for false-positive
    /// accounting and never influences routing.
    RouteUpdate {
        filter: BloomFilter,
        reachable: BTreeSet<GroupId>,
        alternates: Alternates,
    },
    Query(QueryState),
    QueryResponse {
        outcome: QueryOutcome,
        query: QueryState,
    },
    /// Graceful departure; receivers substitute the sender with the
    /// nearer of its immediate neighbours.
    Leave { alternates: Alternates },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::JoinProbe { .. } => "JoinProbe",
            Message::JoinAccept { .. } => "JoinAccept",
            Message::Register { .. } => "Register",
            Message::RouteUpdate { .. } => "RouteUpdate",
            Message::Query(_) => "Query",
            Message::QueryResponse { .. } => "QueryResponse",
            Message::Leave { .. } => "Leave",
        }
    }

    pub fn is_route_update(&self) -> bool {
        matches!(self, Message::RouteUpdate { .. })
    }

    /// Stable payload digest for trace lines.
    pub fn digest(&self) -> u64 {
        let mut h = Digest::new();
        match self {
            Message::JoinProbe {
                joiner,
                target,
                purpose,
                ttl,
                hops,
            } => {
                h.tag(1);
                h.node(*joiner);
                h.f64(target.value());
                h.purpose(purpose);
                h.u64(u64::from(*ttl));
                h.u64(u64::from(*hops));
            }
            Message::JoinAccept {
                purpose,
                alternates,
                hops,
            } => {
                h.tag(2);
                h.purpose(purpose);
                h.alternates(alternates);
                h.u64(u64::from(*hops));
            }
            Message::Register { member, ttl, hops } => {
                h.tag(3);
                h.member(member);
                h.u64(u64::from(*ttl));
                h.u64(u64::from(*hops));
            }
            Message::RouteUpdate {
                filter,
                reachable,
                alternates,
            } => {
                h.tag(4);
                h.bytes(&filter.to_bytes());
                h.u64(reachable.len() as u64);
                for g in reachable {
                    h.bytes(g.bytes());
                }
                h.alternates(alternates);
            }
            Message::Query(q) => {
                h.tag(5);
                h.query(q);
            }
            Message::QueryResponse { outcome, query } => {
                h.tag(6);
                match outcome {
                    QueryOutcome::Found(m) => {
                        h.tag(1);
                        h.member(m);
                    }
                    QueryOutcome::NotFound { ttl_failure } => {
                        h.tag(2);
                        h.u64(u64::from(*ttl_failure));
                    }
                }
                h.query(query);
            }
            Message::Leave { alternates } => {
                h.tag(7);
                h.alternates(alternates);
            }
        }
        h.finish()
    }
}

/// Incremental FNV-1a over a canonical field encoding.
struct Digest(u64);

impl Digest {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn byte(&mut self, b: u8) {
        self.0 ^= u64::from(b);
        self.0 = self.0.wrapping_mul(0x100_0000_01b3);
    }

    fn bytes(&mut self, bs: &[u8]) {
        for &b in bs {
            self.byte(b);
        }
    }

    fn tag(&mut self, t: u8) {
        self.byte(t);
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn node(&mut self, id: NodeId) {
        self.f64(id.ring.value());
        self.u64(u64::from(id.tiebreak));
    }

    fn opt_node(&mut self, id: Option<NodeId>) {
        match id {
            Some(id) => {
                self.tag(1);
                self.node(id);
            }
            None => self.tag(0),
        }
    }

    fn alternates(&mut self, a: &Alternates) {
        self.opt_node(a.cw);
        self.opt_node(a.acw);
    }

    fn member(&mut self, m: &MemberRecord) {
        self.bytes(m.group.bytes());
        self.u64(m.address);
        for &c in m.position.coords() {
            self.f64(c);
        }
        self.f64(m.ring.value());
    }

    fn purpose(&mut self, p: &ProbePurpose) {
        match p {
            ProbePurpose::Join(DirSet::Both) => self.tag(1),
            ProbePurpose::Join(DirSet::One(Direction::Clockwise)) => self.tag(2),
            ProbePurpose::Join(DirSet::One(Direction::Anticlockwise)) => self.tag(3),
            ProbePurpose::Repair => self.tag(4),
            ProbePurpose::Resolve { token } => {
                self.tag(5);
                self.u64(*token);
            }
        }
    }

    fn query(&mut self, q: &QueryState) {
        self.bytes(q.group.bytes());
        self.node(q.origin);
        self.u64(q.query_id);
        self.u64(q.path.len() as u64);
        for &n in &q.path {
            self.node(n);
        }
        for &d in &q.hop_dists {
            self.f64(d);
        }
        self.u64(u64::from(q.ttl));
    }

    fn finish(self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfc::RingCoord;

    #[test]
    fn digest_distinguishes_payloads() {
        let a = Message::Leave {
            alternates: Alternates {
                cw: Some(NodeId::new(RingCoord::new(0.25), 1)),
                acw: None,
            },
        };
        let b = Message::Leave {
            alternates: Alternates {
                cw: None,
                acw: Some(NodeId::new(RingCoord::new(0.25), 1)),
            },
        };
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }
}
