//! The overlay node: neighbour construction, membership registry,
//! routing-table maintenance with area-aggregated announcements, update
//! throttling, query forwarding and churn handling.
//!
//! Everything here is a pure transition: `(state, message, clock)`
//! in, `(state, outgoing messages)` out. Nodes never read a wall clock,
//! never touch randomness and never share state, so the simulator owns
//! time and delivery completely and runs are replayable.
//!
//! Routing tables order entries by ascending ring distance (clockwise
//! first on ties, then lower id) behind the local registry. The filter
//! announced to a neighbour is the union of the local registry filter
//! and the filters received from every strictly closer neighbour, so
//! the announcement to a farther neighbour is always a superset of the
//! announcement to a nearer one, and a matched query hop can always be
//! continued through a strictly nearer entry at the next node. Filters
//! are rebuilt from current inputs on every flush; departures propagate
//! with the same update waves as arrivals.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use thiserror::Error;

use crate::bloom::{BloomFilter, BloomParams, GroupId};
use crate::message::{DirSet, Message, ProbePurpose, QueryOutcome, QueryState};
use crate::sfc::{directional_arc, ring_distance, ring_target, side_of, Direction, RingCoord};

pub type SimTime = f64;

/// Halving probes stop at this distance even if no neighbour has been
/// certified yet; refinement probes take over well before it matters.
const MIN_PROBE_DIST: f64 = 1.0 / (1u64 << 26) as f64;

/// Hard cap on probes per joining direction. Orders of magnitude above
/// anything a healthy overlay needs; hitting it means the topology is
/// corrupt and the run must fail loudly.
const JOIN_ATTEMPT_CAP: u32 = 512;

/// Overlay node identifier: the ring coordinate plus a join-order
/// tiebreak, ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId {
    pub ring: RingCoord,
    pub tiebreak: u32,
}

impl NodeId {
    pub fn new(ring: RingCoord, tiebreak: u32) -> Self {
        Self { ring, tiebreak }
    }
}

impl Ord for NodeId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ring
            .cmp(&other.ring)
            .then(self.tiebreak.cmp(&other.tiebreak))
    }
}

impl PartialOrd for NodeId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.tiebreak)
    }
}

/// A node's immediate neighbours in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Alternates {
    pub cw: Option<NodeId>,
    pub acw: Option<NodeId>,
}

impl Alternates {
    pub fn on_side(&self, dir: Direction) -> Option<NodeId> {
        match dir {
            Direction::Clockwise => self.cw,
            Direction::Anticlockwise => self.acw,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> {
        self.cw.into_iter().chain(self.acw)
    }
}

/// A registered group membership: who, where, and the ring coordinate
/// the position maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberRecord {
    pub group: GroupId,
    pub address: u64,
    pub position: crate::delay_space::DelayPoint,
    pub ring: RingCoord,
}

/// A Bloom filter paired with the exact set it summarises. The exact
/// set exists for false-positive accounting and invariant checks only;
/// routing decisions read the filter alone.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFilter {
    pub bloom: BloomFilter,
    pub exact: BTreeSet<GroupId>,
}

impl TrackedFilter {
    pub fn empty(params: BloomParams) -> Self {
        Self {
            bloom: BloomFilter::empty(params),
            exact: BTreeSet::new(),
        }
    }
}

/// Routing-table entry for one neighbour.
#[derive(Debug, Clone)]
pub struct NeighborEntry {
    pub id: NodeId,
    /// Ring distance to the neighbour; the table sort key.
    pub dist: f64,
    pub dir: Direction,
    /// Last announcement received from this neighbour: the groups
    /// reachable through it.
    pub filter: TrackedFilter,
    /// The neighbour's own immediate neighbours, as last reported.
    pub alternates: Alternates,
    pending: bool,
    last_sent_at: Option<SimTime>,
}

impl NeighborEntry {
    fn table_key(&self) -> (f64, bool, NodeId) {
        (self.dist, self.dir != Direction::Clockwise, self.id)
    }
}

fn key_cmp(a: &NeighborEntry, b: &NeighborEntry) -> std::cmp::Ordering {
    let (ad, acw, aid) = a.table_key();
    let (bd, bcw, bid) = b.table_key();
    ad.total_cmp(&bd).then(acw.cmp(&bcw)).then(aid.cmp(&bid))
}

#[derive(Debug, Error, PartialEq)]
pub enum NodeFault {
    #[error("{kind} ttl exhausted at {node} toward {target}")]
    TtlExhausted {
        kind: &'static str,
        node: NodeId,
        target: RingCoord,
    },
    #[error("join stalled at {0} after too many probes in one direction")]
    JoinStalled(NodeId),
}

/// Per-node protocol parameters, fixed per scenario.
#[derive(Debug, Clone, Copy)]
pub struct NodeConfig {
    pub bloom: BloomParams,
    /// Minimum interval between consecutive updates to one neighbour,
    /// in sim-ms. Zero flushes synchronously with local changes;
    /// infinity means a neighbour is updated at most once.
    pub update_interval: f64,
    pub resolve_ttl: u32,
    pub query_ttl: u32,
}

impl NodeConfig {
    pub fn new(bloom: BloomParams, update_interval: f64, overlay_size: usize) -> Self {
        Self {
            bloom,
            update_interval,
            resolve_ttl: default_resolve_ttl(overlay_size),
            query_ttl: 64,
        }
    }
}

impl NodeState {
    /// Changes the update throttle; the harness applies this when a
    /// scenario phase starts (construction always runs unthrottled).
    pub fn set_update_interval(&mut self, interval: f64) {
        self.cfg.update_interval = interval;
    }
}

/// Resolution must terminate within `2*ceil(log2 n) + 16` hops on a
/// healthy overlay; exceeding this is a hard failure.
pub fn default_resolve_ttl(overlay_size: usize) -> u32 {
    2 * (overlay_size.max(2) as f64).log2().ceil() as u32 + 16
}

#[derive(Debug, Clone)]
struct DirProgress {
    done: bool,
    next_dist: f64,
    attempts: u32,
    refresh_candidate: bool,
}

#[derive(Debug, Clone)]
struct JoinState {
    cw: DirProgress,
    acw: DirProgress,
}

impl JoinState {
    fn new() -> Self {
        let fresh = DirProgress {
            done: false,
            next_dist: 0.25,
            attempts: 0,
            refresh_candidate: false,
        };
        Self {
            cw: fresh.clone(),
            acw: fresh,
        }
    }

    fn progress_mut(&mut self, dir: Direction) -> &mut DirProgress {
        match dir {
            Direction::Clockwise => &mut self.cw,
            Direction::Anticlockwise => &mut self.acw,
        }
    }

    fn complete(&self) -> bool {
        self.cw.done && self.acw.done
    }
}

/// A message queued for the simulator to deliver.
#[derive(Debug, Clone)]
pub struct Outgoing {
    pub dst: NodeId,
    pub msg: Message,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    id: NodeId,
    cfg: NodeConfig,
    registry: BTreeMap<GroupId, Vec<MemberRecord>>,
    local: TrackedFilter,
    entries: Vec<NeighborEntry>,
    join: Option<JoinState>,
    /// Route updates from senders no longer in the table (late messages
    /// after churn).
    pub unknown_updates: u64,
    /// Bloom matches during query scans that the exact shadow set
    /// disproves.
    pub false_positive_events: u64,
}

impl NodeState {
    pub fn new(id: NodeId, cfg: NodeConfig) -> Self {
        Self {
            id,
            cfg,
            registry: BTreeMap::new(),
            local: TrackedFilter::empty(cfg.bloom),
            entries: Vec::new(),
            join: None,
            unknown_updates: 0,
            false_positive_events: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn table(&self) -> &[NeighborEntry] {
        &self.entries
    }

    pub fn local_filter(&self) -> &TrackedFilter {
        &self.local
    }

    pub fn registry(&self) -> &BTreeMap<GroupId, Vec<MemberRecord>> {
        &self.registry
    }

    /// Empties the registry (graceful departure); the harness
    /// re-registers the records on the members' behalf.
    pub fn take_registry(&mut self) -> Vec<MemberRecord> {
        let records = self
            .registry
            .values()
            .flat_map(|v| v.iter().cloned())
            .collect();
        self.registry.clear();
        self.rebuild_local_filter();
        records
    }

    pub fn join_complete(&self) -> bool {
        self.join.is_none()
    }

    pub fn neighbor_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn has_neighbor(&self, id: NodeId) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }

    /// Immediate neighbour travelling in `dir`: the entry with the
    /// smallest directional arc (ties by tiebreak, so coincident
    /// coordinates still order deterministically).
    pub fn immediate(&self, dir: Direction) -> Option<NodeId> {
        self.entries
            .iter()
            .map(|e| e.id)
            .min_by(|a, b| {
                directional_arc(self.id.ring, a.ring, dir)
                    .total_cmp(&directional_arc(self.id.ring, b.ring, dir))
                    .then(a.tiebreak.cmp(&b.tiebreak))
            })
    }

    pub fn alternates(&self) -> Alternates {
        Alternates {
            cw: self.immediate(Direction::Clockwise),
            acw: self.immediate(Direction::Anticlockwise),
        }
    }

    /// Earliest time a throttled pending update becomes sendable, if
    /// any; the simulator schedules a flush wake-up for it.
    pub fn next_flush_at(&self) -> Option<SimTime> {
        if self.cfg.update_interval == 0.0 || self.cfg.update_interval.is_infinite() {
            return None;
        }
        self.entries
            .iter()
            .filter(|e| e.pending)
            .filter_map(|e| e.last_sent_at.map(|t| t + self.cfg.update_interval))
            .min_by(f64::total_cmp)
    }

    /// Sanity pass over the table structure; violations indicate a
    /// protocol bug, not a scenario artefact.
    pub fn check_invariants(&self) -> Result<(), String> {
        for pair in self.entries.windows(2) {
            if key_cmp(&pair[0], &pair[1]) != std::cmp::Ordering::Less {
                return Err(format!("{}: table out of order", self.id));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if e.id == self.id {
                return Err(format!("{}: self entry", self.id));
            }
            if !seen.insert(e.id) {
                return Err(format!("{}: duplicate entry {}", self.id, e.id));
            }
            let expect = ring_distance(self.id.ring, e.id.ring);
            if (e.dist - expect).abs() > 1e-12 {
                return Err(format!("{}: stale distance for {}", self.id, e.id));
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Joining
    // ------------------------------------------------------------------

    /// Starts neighbour construction: the farthest target first (the
    /// antipode, shared by both directions), then per-direction targets
    /// at geometrically halving distances until the immediate neighbour
    /// in each direction has confirmed the link.
    pub fn start_join(&mut self, bootstrap: Option<NodeId>, _now: SimTime) -> Vec<Outgoing> {
        let Some(bootstrap) = bootstrap else {
            // First node of the overlay: nothing to connect to.
            self.join = None;
            return Vec::new();
        };
        self.join = Some(JoinState::new());
        vec![Outgoing {
            dst: bootstrap,
            msg: Message::JoinProbe {
                joiner: self.id,
                target: ring_target(self.id.ring, 0.5, Direction::Clockwise),
                purpose: ProbePurpose::Join(DirSet::Both),
                ttl: self.cfg.resolve_ttl,
                hops: 0,
            },
        }]
    }

    /// Re-runs the target ladder against the current overlay, routing
    /// through the existing table. Nodes that joined a much smaller
    /// overlay only hold the ladder of that early era plus whatever
    /// probes landed on them since; one refresh against the full ring
    /// restores the geometric neighbour spread their announcements and
    /// forwarding rely on.
    pub fn start_refresh(&mut self, _now: SimTime) -> Vec<Outgoing> {
        let Some(first_hop) = self
            .next_hop_toward(ring_target(self.id.ring, 0.5, Direction::Clockwise))
            .or_else(|| self.entries.first().map(|e| e.id))
        else {
            return Vec::new();
        };
        self.join = Some(JoinState::new());
        vec![Outgoing {
            dst: first_hop,
            msg: Message::JoinProbe {
                joiner: self.id,
                target: ring_target(self.id.ring, 0.5, Direction::Clockwise),
                purpose: ProbePurpose::Join(DirSet::Both),
                ttl: self.cfg.resolve_ttl,
                hops: 0,
            },
        }]
    }

    // ------------------------------------------------------------------
    // Message dispatch
    // ------------------------------------------------------------------

    pub fn on_message(
        &mut self,
        src: NodeId,
        msg: Message,
        now: SimTime,
    ) -> Result<Vec<Outgoing>, NodeFault> {
        let mut out = Vec::new();
        match msg {
            Message::JoinProbe {
                joiner,
                target,
                purpose,
                ttl,
                hops,
            } => self.on_probe(joiner, target, purpose, ttl, hops, now, &mut out)?,
            Message::JoinAccept {
                purpose,
                alternates,
                hops: _,
            } => self.on_accept(src, purpose, alternates, now, &mut out)?,
            Message::Register { member, ttl, hops } => {
                self.on_register(member, ttl, hops, now, &mut out)?
            }
            Message::RouteUpdate {
                filter,
                reachable,
                alternates,
            } => self.on_route_update(src, filter, reachable, alternates, now, &mut out),
            Message::Query(q) => self.on_query(q, now, &mut out),
            Message::QueryResponse { .. } => {
                // Terminates at the origin; the harness records it.
            }
            Message::Leave { alternates } => self.on_leave(src, alternates, now, &mut out),
        }
        Ok(out)
    }

    /// Greedy next hop: the neighbour strictly closest to `target`,
    /// clockwise first and lower id on ties. `None` means this node is
    /// closer than every neighbour, i.e. it is the resolution target.
    pub fn next_hop_toward(&self, target: RingCoord) -> Option<NodeId> {
        let own = ring_distance(self.id.ring, target);
        self.entries
            .iter()
            .filter(|e| ring_distance(e.id.ring, target) < own)
            .min_by(|a, b| {
                ring_distance(a.id.ring, target)
                    .total_cmp(&ring_distance(b.id.ring, target))
                    .then((a.dir != Direction::Clockwise).cmp(&(b.dir != Direction::Clockwise)))
                    .then(a.id.cmp(&b.id))
            })
            .map(|e| e.id)
    }

    #[allow(clippy::too_many_arguments)]
    fn on_probe(
        &mut self,
        joiner: NodeId,
        target: RingCoord,
        purpose: ProbePurpose,
        ttl: u32,
        hops: u32,
        now: SimTime,
        out: &mut Vec<Outgoing>,
    ) -> Result<(), NodeFault> {
        if let Some(next) = self.next_hop_toward(target) {
            if ttl == 0 {
                return Err(NodeFault::TtlExhausted {
                    kind: "probe",
                    node: self.id,
                    target,
                });
            }
            out.push(Outgoing {
                dst: next,
                msg: Message::JoinProbe {
                    joiner,
                    target,
                    purpose,
                    ttl: ttl - 1,
                    hops: hops + 1,
                },
            });
            return Ok(());
        }
        // Terminal: no neighbour is closer to the target than we are.
        if joiner == self.id {
            // Our own probe came home: the overlay holds nothing nearer
            // that target, so move the join schedule along directly.
            if let ProbePurpose::Join(dirs) = purpose {
                self.join_step(dirs, now, out)?;
            }
            return Ok(());
        }
        if !matches!(purpose, ProbePurpose::Resolve { .. }) {
            // Links are bidirectional: record the prober before
            // reporting immediates, so the report reflects the link.
            self.adopt(joiner, None);
        }
        out.push(Outgoing {
            dst: joiner,
            msg: Message::JoinAccept {
                purpose,
                alternates: self.alternates(),
                hops,
            },
        });
        // Flush after the accept so the newcomer's first announcement
        // from us arrives at a node that already knows the link.
        self.flush(now, out);
        Ok(())
    }

    fn on_accept(
        &mut self,
        responder: NodeId,
        purpose: ProbePurpose,
        alternates: Alternates,
        now: SimTime,
        out: &mut Vec<Outgoing>,
    ) -> Result<(), NodeFault> {
        match purpose {
            ProbePurpose::Resolve { .. } => return Ok(()),
            ProbePurpose::Repair | ProbePurpose::Join(_) => {
                self.adopt(responder, Some(alternates));
            }
        }
        if let ProbePurpose::Join(dirs) = purpose {
            self.join_step(dirs, now, out)?;
        } else {
            self.flush(now, out);
        }
        Ok(())
    }

    /// One turn of the join state machine: see whether either direction
    /// is settled, then keep the probe pipeline going for the
    /// directions this step covers.
    fn join_step(
        &mut self,
        dirs: DirSet,
        now: SimTime,
        out: &mut Vec<Outgoing>,
    ) -> Result<(), NodeFault> {
        // A step can settle either direction, not just the one that
        // asked: check both before sending more probes.
        for dir in [Direction::Clockwise, Direction::Anticlockwise] {
            self.try_certify(dir);
        }
        for dir in [Direction::Clockwise, Direction::Anticlockwise] {
            if dirs.contains(dir) {
                self.advance_join(dir, out)?;
            }
        }
        if self.join.as_ref().is_some_and(JoinState::complete) {
            self.join = None;
        }
        self.flush(now, out);
        Ok(())
    }

    /// The immediate neighbour in `dir` is confirmed once its reported
    /// immediate on the opposite side is this node: nothing sits
    /// between us.
    fn try_certify(&mut self, dir: Direction) {
        let certified = self
            .immediate(dir)
            .and_then(|cand| self.entries.iter().find(|e| e.id == cand))
            .is_some_and(|e| e.alternates.on_side(dir.opposite()) == Some(self.id));
        if certified {
            if let Some(join) = self.join.as_mut() {
                join.progress_mut(dir).done = true;
            }
        }
    }

    fn advance_join(&mut self, dir: Direction, out: &mut Vec<Outgoing>) -> Result<(), NodeFault> {
        let me = self.id;
        let cand = self.immediate(dir).map(|cand| {
            let reported = self
                .entries
                .iter()
                .find(|e| e.id == cand)
                .and_then(|e| e.alternates.on_side(dir.opposite()));
            (cand, reported)
        });
        let Some(join) = self.join.as_mut() else {
            return Ok(());
        };
        let prog = join.progress_mut(dir);
        if prog.done {
            return Ok(());
        }
        prog.attempts += 1;
        if prog.attempts > JOIN_ATTEMPT_CAP {
            return Err(NodeFault::JoinStalled(me));
        }
        let target = match cand {
            None => {
                if prog.next_dist < MIN_PROBE_DIST {
                    return Err(NodeFault::JoinStalled(me));
                }
                let d = prog.next_dist;
                prog.next_dist = d / 2.0;
                ring_target(me.ring, d, dir)
            }
            Some((cand_id, reported)) => {
                let arc = directional_arc(me.ring, cand_id.ring, dir).max(MIN_PROBE_DIST);
                if prog.next_dist >= arc / 2.0 && prog.next_dist >= MIN_PROBE_DIST {
                    let d = prog.next_dist;
                    prog.next_dist = d / 2.0;
                    ring_target(me.ring, d, dir)
                } else {
                    // Geometric schedule exhausted without confirmation:
                    // walk the gap by probing the candidate's reported
                    // opposite-side immediate, re-probing the candidate
                    // itself every other attempt to refresh its report.
                    prog.refresh_candidate = !prog.refresh_candidate;
                    match reported {
                        Some(x) if x != me && !prog.refresh_candidate => x.ring,
                        _ => cand_id.ring,
                    }
                }
            }
        };
        let probe = Message::JoinProbe {
            joiner: me,
            target,
            purpose: ProbePurpose::Join(DirSet::One(dir)),
            ttl: self.cfg.resolve_ttl,
            hops: 0,
        };
        // Route through the best known node; greedy forwarding takes
        // over from there.
        let first_hop = self
            .entries
            .iter()
            .min_by(|a, b| {
                ring_distance(a.id.ring, target)
                    .total_cmp(&ring_distance(b.id.ring, target))
                    .then(a.id.cmp(&b.id))
            })
            .map(|e| e.id)
            .expect("advance_join runs after at least one adoption");
        out.push(Outgoing {
            dst: first_hop,
            msg: probe,
        });
        Ok(())
    }

    // ------------------------------------------------------------------
    // Membership and routing updates
    // ------------------------------------------------------------------

    fn on_register(
        &mut self,
        member: MemberRecord,
        ttl: u32,
        hops: u32,
        now: SimTime,
        out: &mut Vec<Outgoing>,
    ) -> Result<(), NodeFault> {
        if let Some(next) = self.next_hop_toward(member.ring) {
            if ttl == 0 {
                return Err(NodeFault::TtlExhausted {
                    kind: "register",
                    node: self.id,
                    target: member.ring,
                });
            }
            out.push(Outgoing {
                dst: next,
                msg: Message::Register {
                    member,
                    ttl: ttl - 1,
                    hops: hops + 1,
                },
            });
            return Ok(());
        }
        // We are the closest node to the member's coordinate: install.
        let slot = self.registry.entry(member.group.clone()).or_default();
        slot.retain(|m| m.address != member.address);
        slot.push(member);
        slot.sort_by(|a, b| a.ring.cmp(&b.ring).then(a.address.cmp(&b.address)));
        self.rebuild_local_filter();
        self.mark_all_pending();
        self.flush(now, out);
        Ok(())
    }

    /// True if the filter or the exact set moved.
    fn rebuild_local_filter(&mut self) -> bool {
        let mut fresh = TrackedFilter::empty(self.cfg.bloom);
        for group in self.registry.keys() {
            fresh.bloom.insert(group);
            fresh.exact.insert(group.clone());
        }
        let changed = fresh != self.local;
        self.local = fresh;
        changed
    }

    fn on_route_update(
        &mut self,
        from: NodeId,
        filter: BloomFilter,
        reachable: BTreeSet<GroupId>,
        alternates: Alternates,
        now: SimTime,
        out: &mut Vec<Outgoing>,
    ) {
        let Some(idx) = self.entries.iter().position(|e| e.id == from) else {
            self.unknown_updates += 1;
            return;
        };
        let entry = &mut self.entries[idx];
        let content_changed = entry.filter.bloom != filter || entry.filter.exact != reachable;
        entry.filter = TrackedFilter {
            bloom: filter,
            exact: reachable,
        };
        entry.alternates = alternates;
        if content_changed {
            // Reachability through `from` changed; everyone farther
            // than `from` sees it inside their announcement.
            for e in &mut self.entries[idx + 1..] {
                e.pending = true;
            }
        }
        self.flush(now, out);
    }

    /// The area announcement for the entry at `idx`: local registry
    /// plus everything received from strictly closer neighbours.
    pub fn announcement(&self, idx: usize) -> TrackedFilter {
        let mut ann = self.local.clone();
        for e in &self.entries[..idx] {
            ann.bloom
                .union_with(&e.filter.bloom)
                .expect("scenario-wide filter parameters");
            ann.exact.extend(e.filter.exact.iter().cloned());
        }
        ann
    }

    fn mark_all_pending(&mut self) {
        for e in &mut self.entries {
            e.pending = true;
        }
    }

    /// Sends every pending, throttle-eligible announcement.
    /// Announcements grow monotonically down the table, so one running
    /// prefix union serves every entry. Update waves die out because
    /// receivers re-propagate only on a content change, not here.
    fn flush(&mut self, now: SimTime, out: &mut Vec<Outgoing>) {
        if !self.entries.iter().any(|e| e.pending) {
            return;
        }
        let interval = self.cfg.update_interval;
        let alts = self.alternates();
        let mut running = self.local.clone();
        let mut sends: Vec<(usize, TrackedFilter)> = Vec::new();
        for (idx, e) in self.entries.iter().enumerate() {
            if e.pending {
                // Maturity must be the same expression `next_flush_at`
                // uses, or rounding can strand a pending entry behind a
                // timer that keeps firing a hair too early.
                let eligible = match e.last_sent_at {
                    None => true,
                    Some(_) if interval.is_infinite() => false,
                    Some(last) => now >= last + interval,
                };
                if eligible {
                    sends.push((idx, running.clone()));
                }
            }
            running
                .bloom
                .union_with(&e.filter.bloom)
                .expect("scenario-wide filter parameters");
            running.exact.extend(e.filter.exact.iter().cloned());
        }
        for (idx, ann) in sends {
            let e = &mut self.entries[idx];
            e.pending = false;
            e.last_sent_at = Some(now);
            out.push(Outgoing {
                dst: e.id,
                msg: Message::RouteUpdate {
                    filter: ann.bloom,
                    reachable: ann.exact,
                    alternates: alts,
                },
            });
        }
    }

    /// Wake-up from the simulator once a throttled update matures.
    pub fn on_flush_timer(&mut self, now: SimTime) -> Vec<Outgoing> {
        let mut out = Vec::new();
        self.flush(now, &mut out);
        out
    }

    // ------------------------------------------------------------------
    // Neighbour set changes
    // ------------------------------------------------------------------

    /// Inserts or refreshes a neighbour. New links are marked pending so
    /// the newcomer receives our announcement; a change of immediate
    /// neighbours re-announces everywhere (announcements carry them as
    /// failure alternates). The caller flushes when its own sends are
    /// ordered.
    fn adopt(&mut self, id: NodeId, alternates: Option<Alternates>) {
        if id == self.id {
            return;
        }
        if let Some(e) = self.entries.iter_mut().find(|e| e.id == id) {
            if let Some(alts) = alternates {
                e.alternates = alts;
            }
            return;
        }
        let before = self.alternates();
        let (dir, dist) = side_of(self.id.ring, id.ring);
        let entry = NeighborEntry {
            id,
            dist,
            dir,
            filter: TrackedFilter::empty(self.cfg.bloom),
            alternates: alternates.unwrap_or_default(),
            pending: true,
            last_sent_at: None,
        };
        let pos = self
            .entries
            .binary_search_by(|e| key_cmp(e, &entry))
            .unwrap_err();
        self.entries.insert(pos, entry);
        if self.alternates() != before {
            self.mark_all_pending();
        }
    }

    fn remove_neighbor(&mut self, id: NodeId) -> Option<NeighborEntry> {
        let idx = self.entries.iter().position(|e| e.id == id)?;
        let before = self.alternates();
        let entry = self.entries.remove(idx);
        if self.alternates() != before {
            self.mark_all_pending();
        }
        Some(entry)
    }

    /// Picks the best replacement among a departed neighbour's reported
    /// immediates and probes it so the link forms bidirectionally.
    fn substitute(
        &mut self,
        departed: NodeId,
        alternates: Alternates,
        fallback: Option<(f64, Direction)>,
        now: SimTime,
        out: &mut Vec<Outgoing>,
    ) {
        let named = alternates
            .iter()
            .filter(|&x| x != self.id && x != departed && !self.has_neighbor(x))
            .min_by(|a, b| {
                ring_distance(self.id.ring, a.ring)
                    .total_cmp(&ring_distance(self.id.ring, b.ring))
                    .then(a.cmp(b))
            });
        let target = named.map(|x| x.ring).or_else(|| {
            fallback.map(|(dist, dir)| {
                ring_target(self.id.ring, dist.clamp(MIN_PROBE_DIST, 0.5), dir)
            })
        });
        let Some(target) = target else { return };
        let probe = Message::JoinProbe {
            joiner: self.id,
            target,
            purpose: ProbePurpose::Repair,
            ttl: self.cfg.resolve_ttl,
            hops: 0,
        };
        let first_hop = self
            .entries
            .iter()
            .min_by(|a, b| {
                ring_distance(a.id.ring, target)
                    .total_cmp(&ring_distance(b.id.ring, target))
                    .then(a.id.cmp(&b.id))
            })
            .map(|e| e.id)
            // Empty table: nobody to route through, so go straight to
            // the named substitute if we have one.
            .or(named);
        if let Some(hop) = first_hop {
            out.push(Outgoing {
                dst: hop,
                msg: probe,
            });
        }
        self.flush(now, out);
    }

    fn on_leave(
        &mut self,
        departed: NodeId,
        alternates: Alternates,
        now: SimTime,
        out: &mut Vec<Outgoing>,
    ) {
        if self.remove_neighbor(departed).is_none() {
            return;
        }
        self.substitute(departed, alternates, None, now, out);
    }

    /// Prepares this node's graceful departure: every neighbour learns
    /// our immediates so it can splice the ring without us. The caller
    /// tears the node down afterwards.
    pub fn begin_leave(&mut self, _now: SimTime) -> Vec<Outgoing> {
        let alternates = self.alternates();
        self.entries
            .iter()
            .map(|e| Outgoing {
                dst: e.id,
                msg: Message::Leave { alternates },
            })
            .collect()
    }

    /// Simulator-signalled neighbour failure: swap in the stored
    /// alternate, or re-probe the entry's old scale if none was known.
    pub fn repair_failed(&mut self, dead: NodeId, now: SimTime) -> Vec<Outgoing> {
        let mut out = Vec::new();
        let Some(entry) = self.remove_neighbor(dead) else {
            return out;
        };
        self.substitute(
            dead,
            entry.alternates,
            Some((entry.dist, entry.dir)),
            now,
            &mut out,
        );
        out
    }

    // ------------------------------------------------------------------
    // Queries
    // ------------------------------------------------------------------

    /// Starts a query at this node (query senders are attached to their
    /// closest overlay node, which in the simulator is the node
    /// itself).
    pub fn issue_query(&mut self, group: GroupId, query_id: u64, now: SimTime) -> Vec<Outgoing> {
        let q = QueryState {
            group,
            origin: self.id,
            query_id,
            path: vec![self.id],
            hop_dists: Vec::new(),
            ttl: self.cfg.query_ttl,
        };
        let mut out = Vec::new();
        self.on_query(q, now, &mut out);
        out
    }

    fn on_query(&mut self, q: QueryState, _now: SimTime, out: &mut Vec<Outgoing>) {
        // Local registry scans first; among co-registered members the
        // one ring-nearest to the query origin is returned.
        if let Some(members) = self.registry.get(&q.group) {
            if let Some(best) = members
                .iter()
                .min_by(|a, b| {
                    ring_distance(a.ring, q.origin.ring)
                        .total_cmp(&ring_distance(b.ring, q.origin.ring))
                        .then(a.address.cmp(&b.address))
                })
                .cloned()
            {
                out.push(Outgoing {
                    dst: q.origin,
                    msg: Message::QueryResponse {
                        outcome: QueryOutcome::Found(best),
                        query: q,
                    },
                });
                return;
            }
        }
        if q.ttl == 0 {
            out.push(Outgoing {
                dst: q.origin,
                msg: Message::QueryResponse {
                    outcome: QueryOutcome::NotFound { ttl_failure: true },
                    query: q,
                },
            });
            return;
        }
        // Ascending-distance scan for the first positive filter match,
        // skipping nodes the query has already visited so a false
        // positive cannot trap it in a loop.
        let next = self
            .entries
            .iter()
            .find(|e| !q.path.contains(&e.id) && e.filter.bloom.contains(&q.group));
        match next {
            Some(e) => {
                if !e.filter.exact.contains(&q.group) {
                    self.false_positive_events += 1;
                }
                let mut q = q;
                q.path.push(e.id);
                q.hop_dists.push(e.dist);
                q.ttl -= 1;
                out.push(Outgoing {
                    dst: e.id,
                    msg: Message::Query(q),
                });
            }
            None => {
                out.push(Outgoing {
                    dst: q.origin,
                    msg: Message::QueryResponse {
                        outcome: QueryOutcome::NotFound { ttl_failure: false },
                        query: q,
                    },
                });
            }
        }
    }

    // ------------------------------------------------------------------
    // Coordinate drift
    // ------------------------------------------------------------------

    /// Whether a coordinate change is large enough to warrant removing
    /// and re-inserting the node. Small drifts keep the stale overlay
    /// position.
    pub fn should_reinsert(&self, new_ring: RingCoord, threshold: f64) -> bool {
        ring_distance(self.id.ring, new_ring) > threshold
    }
}
