//! Deterministic discrete-event simulator.
//!
//! One time-ordered queue delivers messages between nodes with latency
//! equal to the delay-space distance between their hosts; ties are
//! broken by a monotone sequence number, so a `(scenario, seed)` pair
//! replays to the identical event order on any platform. The engine
//! owns every host position and node state, injects scenario events
//! (joins, registrations, queries, churn, coordinate perturbation) and
//! is the only place time advances.

use std::collections::BTreeMap;
use std::collections::BinaryHeap;
use std::cmp::Reverse;
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::bloom::{BloomParams, GroupId};
use crate::delay_space::{delay, BoundingBox, DelayPoint};
use crate::message::{Message, ProbePurpose, QueryOutcome};
use crate::node::{MemberRecord, NodeConfig, NodeFault, NodeId, NodeState, Outgoing, SimTime};
use crate::sfc::{ring_distance, ring_of, CurveParams, RingCoord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("protocol fault: {0}")]
    Fault(#[from] NodeFault),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("bad scenario event: {0}")]
    BadControl(String),
    #[error("coordinate mapping failed: {0}")]
    Mapping(#[from] crate::sfc::SfcError),
}

/// Engine-wide fixed parameters.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub bloom: BloomParams,
    pub curve: CurveParams,
    pub bounds: BoundingBox,
    /// Minimum interval between updates to one neighbour, sim-ms.
    pub update_interval_ms: f64,
    /// Expected overlay size; sizes the resolution ttl.
    pub expected_nodes: usize,
}

impl SimConfig {
    fn node_config(&self) -> NodeConfig {
        NodeConfig::new(self.bloom, self.update_interval_ms, self.expected_nodes)
    }
}

#[derive(Debug, Clone)]
struct HostInfo {
    position: DelayPoint,
    /// The overlay coordinate; deliberately stale after perturbation.
    ring: RingCoord,
    alive: bool,
}

/// Scenario-driven events, executed by the harness at their scheduled
/// time. Same-time events run in scheduling order.
#[derive(Debug, Clone)]
pub enum Control {
    Join {
        host: u32,
        bootstrap: Option<u32>,
    },
    Register {
        member: MemberRecord,
        entry: u32,
    },
    Query {
        origin: u32,
        group: GroupId,
    },
    Leave {
        host: u32,
    },
    Fail {
        host: u32,
    },
    /// One pass of the node's target ladder against the current
    /// overlay; used once at the end of construction so early joiners
    /// reach the neighbour spread of the full ring.
    Refresh {
        host: u32,
    },
    Drift {
        host: u32,
        new_position: DelayPoint,
        threshold: f64,
    },
    /// Displace every live host by a random direction and a magnitude
    /// uniform in `[0.5, 1.5] * mean_offset` (mean displacement equals
    /// the offset). Node ring coordinates are left stale on purpose.
    Perturb {
        mean_offset: f64,
        seed: u64,
    },
    Resolve {
        start: u32,
        target: RingCoord,
        token: u64,
    },
}

#[derive(Debug, Clone)]
enum EventKind {
    Deliver {
        src: NodeId,
        dst: NodeId,
        msg: Message,
    },
    Flush {
        host: u32,
    },
    Control(Control),
}

#[derive(Debug, Clone)]
struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Counters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub route_updates_sent: u64,
}

/// A finished query with everything the metrics layer needs.
#[derive(Debug, Clone)]
pub struct CompletedQuery {
    pub query_id: u64,
    pub origin: u32,
    pub group: GroupId,
    pub path: Vec<NodeId>,
    pub hop_dists: Vec<f64>,
    pub found: Option<MemberRecord>,
    pub ttl_failure: bool,
    pub issue_time: SimTime,
    pub complete_time: SimTime,
    /// How many members had registered when the query was issued.
    pub members_at_issue: usize,
    /// Sum of per-hop link delays along the forwarding path.
    pub query_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ResolveResult {
    pub token: u64,
    pub responder: NodeId,
    pub hops: u32,
}

#[derive(Debug, Clone, Copy)]
struct PendingQuery {
    origin: u32,
    issue_time: SimTime,
    members_at_issue: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStatus {
    pub time: SimTime,
    pub quiescent: bool,
}

#[derive(Clone)]
pub struct Simulator {
    cfg: SimConfig,
    hosts: Vec<HostInfo>,
    nodes: Vec<Option<NodeState>>,
    queue: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    clock: SimTime,
    counters: Counters,
    flush_scheduled: Vec<Option<SimTime>>,
    pending_queries: BTreeMap<u64, PendingQuery>,
    completed_queries: Vec<CompletedQuery>,
    resolve_results: Vec<ResolveResult>,
    /// Registration log in execution order; the closest-member oracle
    /// snapshots a prefix of it per query.
    members: Vec<MemberRecord>,
    next_query_id: u64,
    next_resolve_token: u64,
    trace: Option<Vec<u8>>,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Self {
        Self {
            cfg,
            hosts: Vec::new(),
            nodes: Vec::new(),
            queue: BinaryHeap::new(),
            next_seq: 0,
            clock: 0.0,
            counters: Counters::default(),
            flush_scheduled: Vec::new(),
            pending_queries: BTreeMap::new(),
            completed_queries: Vec::new(),
            resolve_results: Vec::new(),
            members: Vec::new(),
            next_query_id: 0,
            next_resolve_token: 0,
            trace: None,
        }
    }

    pub fn enable_trace(&mut self) {
        if self.trace.is_none() {
            self.trace = Some(Vec::new());
        }
    }

    pub fn take_trace(&mut self) -> Vec<u8> {
        self.trace.take().unwrap_or_default()
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn host_count(&self) -> usize {
        self.hosts.len()
    }

    pub fn position(&self, host: u32) -> &DelayPoint {
        &self.hosts[host as usize].position
    }

    pub fn host_ring(&self, host: u32) -> RingCoord {
        self.hosts[host as usize].ring
    }

    pub fn node(&self, host: u32) -> Option<&NodeState> {
        self.nodes.get(host as usize).and_then(|n| n.as_ref())
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.iter().filter_map(|n| n.as_ref())
    }

    pub fn members(&self) -> &[MemberRecord] {
        &self.members
    }

    pub fn completed_queries(&self) -> &[CompletedQuery] {
        &self.completed_queries
    }

    pub fn resolve_results(&self) -> &[ResolveResult] {
        &self.resolve_results
    }

    pub fn false_positive_events(&self) -> u64 {
        self.live_nodes().map(|n| n.false_positive_events).sum()
    }

    pub fn unknown_update_events(&self) -> u64 {
        self.live_nodes().map(|n| n.unknown_updates).sum()
    }

    /// Changes the update throttle for every live node and every node
    /// joining from now on. The construction phase runs unthrottled;
    /// the scenario's interval starts with the registration phase.
    pub fn set_update_interval(&mut self, interval_ms: f64) {
        self.cfg.update_interval_ms = interval_ms;
        for node in self.nodes.iter_mut().flatten() {
            node.set_update_interval(interval_ms);
        }
    }

    /// Registers a host position; the overlay coordinate is fixed here.
    pub fn add_host(&mut self, position: DelayPoint) -> Result<u32, SimError> {
        let ring = ring_of(&position, &self.cfg.bounds, self.cfg.curve)?;
        let idx = self.hosts.len() as u32;
        self.hosts.push(HostInfo {
            position,
            ring,
            alive: true,
        });
        self.nodes.push(None);
        self.flush_scheduled.push(None);
        Ok(idx)
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { time, seq, kind }));
    }

    pub fn schedule_control(&mut self, time: SimTime, control: Control) {
        self.schedule(time, EventKind::Control(control));
    }

    pub fn schedule_join(&mut self, time: SimTime, host: u32, bootstrap: Option<u32>) {
        self.schedule_control(time, Control::Join { host, bootstrap });
    }

    pub fn schedule_register(&mut self, time: SimTime, member: MemberRecord, entry: u32) {
        self.schedule_control(time, Control::Register { member, entry });
    }

    pub fn schedule_query(&mut self, time: SimTime, origin: u32, group: GroupId) {
        self.schedule_control(time, Control::Query { origin, group });
    }

    pub fn schedule_resolve(&mut self, time: SimTime, start: u32, target: RingCoord) -> u64 {
        let token = self.next_resolve_token;
        self.next_resolve_token += 1;
        self.schedule_control(time, Control::Resolve {
            start,
            target,
            token,
        });
        token
    }

    /// Runs until the queue drains or `max_time` is passed. A drained
    /// queue is quiescence: no undelivered message and no throttled
    /// update still owed (maturing updates always hold a flush timer).
    pub fn run_until_quiescent(&mut self, max_time: SimTime) -> Result<RunStatus, SimError> {
        while let Some(Reverse(ev)) = self.queue.peek() {
            if ev.time > max_time {
                return Ok(RunStatus {
                    time: self.clock,
                    quiescent: false,
                });
            }
            let Reverse(ev) = self.queue.pop().expect("peeked");
            debug_assert!(ev.time >= self.clock, "causality violated");
            self.clock = ev.time;
            match ev.kind {
                EventKind::Deliver { src, dst, msg } => self.deliver(src, dst, msg)?,
                EventKind::Flush { host } => self.fire_flush(host, ev.time)?,
                EventKind::Control(c) => self.execute_control(c)?,
            }
        }
        Ok(RunStatus {
            time: self.clock,
            quiescent: true,
        })
    }

    fn send(&mut self, src: NodeId, out: Outgoing) {
        let src_pos = &self.hosts[src.tiebreak as usize].position;
        let dst_pos = &self.hosts[out.dst.tiebreak as usize].position;
        let latency = delay(src_pos, dst_pos).expect("scenario-wide dimension");
        self.counters.sent += 1;
        if out.msg.is_route_update() {
            self.counters.route_updates_sent += 1;
        }
        self.schedule(
            self.clock + latency,
            EventKind::Deliver {
                src,
                dst: out.dst,
                msg: out.msg,
            },
        );
    }

    fn send_all(&mut self, src: NodeId, outs: Vec<Outgoing>) {
        for out in outs {
            self.send(src, out);
        }
    }

    fn trace_line(&mut self, time: SimTime, src: NodeId, dst: NodeId, msg: &Message, dropped: bool) {
        if let Some(buf) = self.trace.as_mut() {
            let mut line = String::with_capacity(80);
            let _ = write!(
                line,
                "t={time} src={src} dst={dst} kind={}{} digest={:016x}\n",
                msg.kind(),
                if dropped { "!dropped" } else { "" },
                msg.digest()
            );
            buf.extend_from_slice(line.as_bytes());
        }
    }

    fn deliver(&mut self, src: NodeId, dst: NodeId, msg: Message) -> Result<(), SimError> {
        let host = dst.tiebreak as usize;
        if self.nodes.get(host).map_or(true, |n| n.is_none()) {
            self.counters.dropped += 1;
            self.trace_line(self.clock, src, dst, &msg, true);
            return Ok(());
        }
        self.counters.delivered += 1;
        self.trace_line(self.clock, src, dst, &msg, false);

        // Harness hooks fire on delivery, before the node handler.
        match &msg {
            Message::QueryResponse { outcome, query } => {
                if query.origin.tiebreak == dst.tiebreak {
                    self.complete_query(outcome, query);
                }
            }
            Message::JoinAccept {
                purpose: ProbePurpose::Resolve { token },
                hops,
                ..
            } => {
                self.resolve_results.push(ResolveResult {
                    token: *token,
                    responder: src,
                    hops: *hops,
                });
            }
            _ => {}
        }

        let now = self.clock;
        let node = self.nodes[host].as_mut().expect("checked above");
        let out = node.on_message(src, msg, now)?;
        let node_id = node.id();
        self.send_all(node_id, out);
        self.sync_flush_timer(host as u32);
        Ok(())
    }

    fn complete_query(&mut self, outcome: &QueryOutcome, query: &crate::message::QueryState) {
        let Some(pending) = self.pending_queries.remove(&query.query_id) else {
            return;
        };
        let query_time_ms = query
            .path
            .windows(2)
            .map(|w| {
                delay(
                    &self.hosts[w[0].tiebreak as usize].position,
                    &self.hosts[w[1].tiebreak as usize].position,
                )
                .expect("scenario-wide dimension")
            })
            .sum();
        let (found, ttl_failure) = match outcome {
            QueryOutcome::Found(m) => (Some(m.clone()), false),
            QueryOutcome::NotFound { ttl_failure } => (None, *ttl_failure),
        };
        self.completed_queries.push(CompletedQuery {
            query_id: query.query_id,
            origin: pending.origin,
            group: query.group.clone(),
            path: query.path.clone(),
            hop_dists: query.hop_dists.clone(),
            found,
            ttl_failure,
            issue_time: pending.issue_time,
            complete_time: self.clock,
            members_at_issue: pending.members_at_issue,
            query_time_ms,
        });
    }

    fn fire_flush(&mut self, host: u32, time: SimTime) -> Result<(), SimError> {
        if self.flush_scheduled[host as usize] != Some(time) {
            return Ok(()); // superseded timer
        }
        self.flush_scheduled[host as usize] = None;
        let Some(node) = self.nodes[host as usize].as_mut() else {
            return Ok(());
        };
        let out = node.on_flush_timer(time);
        let node_id = node.id();
        self.send_all(node_id, out);
        self.sync_flush_timer(host);
        Ok(())
    }

    /// Keeps exactly one live flush timer per node, at the earliest
    /// maturity of its pending throttled updates.
    fn sync_flush_timer(&mut self, host: u32) {
        let Some(node) = self.nodes[host as usize].as_ref() else {
            return;
        };
        let Some(want) = node.next_flush_at() else {
            return;
        };
        let want = want.max(self.clock);
        match self.flush_scheduled[host as usize] {
            Some(t) if t <= want => {}
            _ => {
                self.flush_scheduled[host as usize] = Some(want);
                self.schedule(want, EventKind::Flush { host });
            }
        }
    }

    fn live_node_id(&self, host: u32) -> Option<NodeId> {
        self.nodes[host as usize].as_ref().map(|n| n.id())
    }

    /// Lowest-indexed live overlay node other than `not`.
    fn any_live_node(&self, not: u32) -> Option<u32> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(i, n)| *i as u32 != not && n.is_some())
            .map(|(i, _)| i as u32)
    }

    fn execute_control(&mut self, control: Control) -> Result<(), SimError> {
        let now = self.clock;
        match control {
            Control::Join { host, bootstrap } => {
                let h = host as usize;
                if !self.hosts[h].alive {
                    return Err(SimError::BadControl(format!("join of dead host {host}")));
                }
                if self.nodes[h].is_some() {
                    return Err(SimError::BadControl(format!("host {host} already joined")));
                }
                let id = NodeId::new(self.hosts[h].ring, host);
                let bootstrap_id = match bootstrap {
                    Some(b) => self.live_node_id(b),
                    None => None,
                }
                .or_else(|| {
                    self.any_live_node(host)
                        .and_then(|b| self.live_node_id(b))
                });
                let mut node = NodeState::new(id, self.cfg.node_config());
                let out = node.start_join(bootstrap_id, now);
                self.nodes[h] = Some(node);
                self.send_all(id, out);
            }
            Control::Register { member, entry } => {
                let Some(entry_id) = self.live_node_id(entry) else {
                    return Err(SimError::BadControl(format!(
                        "registration entry {entry} is not an overlay node"
                    )));
                };
                self.members.push(member.clone());
                let msg = Message::Register {
                    member,
                    ttl: self.cfg.node_config().resolve_ttl,
                    hops: 0,
                };
                // The member hands its registration to the entry node
                // directly; forwarding costs start there.
                let node = self.nodes[entry as usize].as_mut().expect("checked");
                let out = node.on_message(entry_id, msg, now)?;
                self.send_all(entry_id, out);
                self.sync_flush_timer(entry);
            }
            Control::Query { origin, group } => {
                let Some(node) = self.nodes[origin as usize].as_mut() else {
                    return Err(SimError::BadControl(format!(
                        "query origin {origin} is not an overlay node"
                    )));
                };
                let query_id = self.next_query_id;
                self.next_query_id += 1;
                self.pending_queries.insert(
                    query_id,
                    PendingQuery {
                        origin,
                        issue_time: now,
                        members_at_issue: self.members.len(),
                    },
                );
                let out = node.issue_query(group, query_id, now);
                let id = node.id();
                self.send_all(id, out);
                self.sync_flush_timer(origin);
            }
            Control::Leave { host } => {
                let h = host as usize;
                let Some(mut node) = self.nodes[h].take() else {
                    return Err(SimError::BadControl(format!("leave of non-node {host}")));
                };
                let id = node.id();
                let out = node.begin_leave(now);
                let records = node.take_registry();
                self.send_all(id, out);
                self.flush_scheduled[h] = None;
                // The departed registrar's members re-register through
                // the nearest remaining node.
                self.reregister(records, id.ring, host);
            }
            Control::Refresh { host } => {
                let Some(node) = self.nodes[host as usize].as_mut() else {
                    return Err(SimError::BadControl(format!("refresh of non-node {host}")));
                };
                let id = node.id();
                let out = node.start_refresh(now);
                self.send_all(id, out);
            }
            Control::Fail { host } => {
                let h = host as usize;
                let Some(node) = self.nodes[h].take() else {
                    return Err(SimError::BadControl(format!("fail of non-node {host}")));
                };
                let dead = node.id();
                self.hosts[h].alive = false;
                self.flush_scheduled[h] = None;
                // No heartbeats are modelled: the failure is signalled
                // to every node holding the dead one as a neighbour.
                for i in 0..self.nodes.len() {
                    let Some(n) = self.nodes[i].as_mut() else {
                        continue;
                    };
                    if !n.has_neighbor(dead) {
                        continue;
                    }
                    let out = n.repair_failed(dead, now);
                    let nid = n.id();
                    self.send_all(nid, out);
                    self.sync_flush_timer(i as u32);
                }
            }
            Control::Drift {
                host,
                new_position,
                threshold,
            } => {
                let h = host as usize;
                let new_ring = ring_of(&new_position, &self.cfg.bounds, self.cfg.curve)?;
                let Some(node) = self.nodes[h].as_mut() else {
                    return Err(SimError::BadControl(format!("drift of non-node {host}")));
                };
                if !node.should_reinsert(new_ring, threshold) {
                    // Below threshold: true delays move, the overlay
                    // position does not.
                    self.hosts[h].position = new_position;
                    return Ok(());
                }
                let mut node = self.nodes[h].take().expect("present above");
                let id = node.id();
                let out = node.begin_leave(now);
                let records = node.take_registry();
                // Deterministic re-entry point: the nearest live former
                // neighbour, else the lowest-indexed live node.
                let bootstrap = node
                    .neighbor_ids()
                    .filter(|n| self.nodes[n.tiebreak as usize].is_some())
                    .min_by(|a, b| {
                        ring_distance(new_ring, a.ring)
                            .total_cmp(&ring_distance(new_ring, b.ring))
                            .then(a.cmp(b))
                    })
                    .map(|n| n.tiebreak)
                    .or_else(|| self.any_live_node(host));
                self.send_all(id, out);
                self.flush_scheduled[h] = None;
                self.hosts[h].position = new_position;
                self.hosts[h].ring = new_ring;
                self.schedule_join(now, host, bootstrap);
                self.reregister(records, new_ring, host);
            }
            Control::Perturb { mean_offset, seed } => {
                if mean_offset == 0.0 {
                    return Ok(());
                }
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                for info in self.hosts.iter_mut() {
                    let angle = rng.random_range(0.0..std::f64::consts::TAU);
                    let magnitude = rng.random_range(0.5 * mean_offset..1.5 * mean_offset);
                    if !info.alive {
                        continue;
                    }
                    let coords = info.position.coords();
                    if coords.len() != 2 {
                        return Err(SimError::BadControl(
                            "perturbation supports 2-d spaces only".into(),
                        ));
                    }
                    info.position = DelayPoint::xy(
                        coords[0] + magnitude * angle.cos(),
                        coords[1] + magnitude * angle.sin(),
                    );
                }
            }
            Control::Resolve {
                start,
                target,
                token,
            } => {
                let Some(node) = self.nodes[start as usize].as_mut() else {
                    return Err(SimError::BadControl(format!(
                        "resolve start {start} is not an overlay node"
                    )));
                };
                let id = node.id();
                let msg = Message::JoinProbe {
                    joiner: id,
                    target,
                    purpose: ProbePurpose::Resolve { token },
                    ttl: self.cfg.node_config().resolve_ttl,
                    hops: 0,
                };
                let out = node.on_message(id, msg, now)?;
                // Terminal at the start node itself: record immediately.
                if out.is_empty() {
                    self.resolve_results.push(ResolveResult {
                        token,
                        responder: id,
                        hops: 0,
                    });
                } else {
                    self.send_all(id, out);
                }
            }
        }
        Ok(())
    }

    fn reregister(&mut self, records: Vec<MemberRecord>, near: RingCoord, not: u32) {
        if records.is_empty() {
            return;
        }
        let entry = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|n| (i as u32, n.id())))
            .filter(|(i, _)| *i != not)
            .min_by(|(_, a), (_, b)| {
                ring_distance(near, a.ring)
                    .total_cmp(&ring_distance(near, b.ring))
                    .then(a.cmp(b))
            })
            .map(|(i, _)| i);
        let Some(entry) = entry else {
            return; // overlay empty: the records are simply lost
        };
        for member in records {
            self.schedule_register(self.clock, member, entry);
        }
    }

    /// Structural check over every live node's routing table.
    pub fn check_invariants(&self) -> Result<(), SimError> {
        for node in self.live_nodes() {
            node.check_invariants().map_err(SimError::Invariant)?;
        }
        let c = self.counters;
        if c.sent != c.delivered + c.dropped + self.queue.len() as u64 {
            return Err(SimError::Invariant(format!(
                "message conservation broken: sent {} != delivered {} + dropped {} + in flight {}",
                c.sent,
                c.delivered,
                c.dropped,
                self.queue.len()
            )));
        }
        Ok(())
    }

    /// Verifies that every live node's immediate neighbours are exactly
    /// its cyclic successor and predecessor among live nodes.
    pub fn verify_ring(&self) -> Result<(), SimError> {
        let mut ids: Vec<NodeId> = self.live_nodes().map(|n| n.id()).collect();
        if ids.len() < 2 {
            return Ok(());
        }
        ids.sort();
        for (i, &id) in ids.iter().enumerate() {
            let succ = ids[(i + 1) % ids.len()];
            let pred = ids[(i + ids.len() - 1) % ids.len()];
            let node = self.node(id.tiebreak).expect("live");
            let got_cw = node.immediate(crate::sfc::Direction::Clockwise);
            let got_acw = node.immediate(crate::sfc::Direction::Anticlockwise);
            if got_cw != Some(succ) || got_acw != Some(pred) {
                return Err(SimError::Invariant(format!(
                    "{id}: immediates {:?}/{:?}, ring expects {succ}/{pred}",
                    got_cw, got_acw
                )));
            }
        }
        Ok(())
    }
}
