//! Distributed overlay anycast table.
//!
//! An application-layer anycast overlay: hosts embedded in a network
//! delay space are mapped through a space-filling curve onto a wrapping
//! ring coordinate, peer with neighbours at logarithmically shrinking
//! ring distances, aggregate the anycast groups reachable through each
//! neighbour into Bloom filters, and answer "find me the closest member
//! of group g" queries by greedy first-match forwarding over those
//! filters.
//!
//! The crate bundles the node protocol itself (pure message handlers),
//! a deterministic discrete-event simulator that delivers messages with
//! latency equal to delay-space distance, and an experiment harness
//! that measures query time, accuracy against brute-force oracles,
//! routing overhead, update-throttling trade-offs and sensitivity to
//! coordinate drift.

pub mod bloom;
pub mod config;
pub mod delay_space;
pub mod experiments;
pub mod message;
pub mod node;
pub mod sfc;
pub mod sim;

pub use bloom::{BloomFilter, BloomParams, GroupId};
pub use delay_space::{BoundingBox, DelayPoint};
pub use node::{MemberRecord, NodeId};
pub use sfc::{CurveKind, CurveParams, Direction, RingCoord};
