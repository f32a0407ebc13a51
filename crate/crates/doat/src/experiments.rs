//! Experiment harness: runnable scenarios over the simulator, metric
//! collection against brute-force oracles, and deterministic CSV
//! output.
//!
//! A scenario fixes the dataset, group density, update throttling,
//! filter and curve geometry and a seed, then runs in one of three
//! modes: synchronous (register everyone, quiesce, query from every
//! node), asynchronous (members arrive at a fixed inter-arrival pace
//! while a sampled fraction of nodes query each intermediate state) or
//! an offset sweep (synchronous build, then per-offset coordinate
//! perturbation with re-issued queries against recomputed oracles).
//!
//! Accuracy uses `(discovered - closest) / mean pairwise delay`, the
//! closest member coming from an exhaustive scan over everything
//! registered when the query was issued. All randomness flows from the
//! scenario seed through named chacha12 streams, so a `(scenario,
//! seed)` pair reproduces byte-identical CSV and trace output.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::bloom::{BloomParams, GroupId};
use crate::delay_space::{
    average_pairwise_delay, delay, generate_uniform, load_coordinates, BoundingBox, DelayPoint,
    GENERATOR_NAME,
};
use crate::node::MemberRecord;
use crate::sfc::{CurveKind, CurveParams};
use crate::sim::{Control, SimConfig, Simulator};

/// Member inter-arrival pace in asynchronous mode. Only its ratio to
/// the update interval matters; the interval is specified in multiples
/// of it.
pub const INTER_ARRIVAL_MS: f64 = 1000.0;

/// Queries sample each intermediate state just before the next arrival.
const QUERY_PHASE_OF_ARRIVAL: f64 = 0.99;

/// Hard ceiling on simulated time per run; reaching it flags the run
/// non-quiescent and invalidates dependent metrics.
pub const MAX_SIM_TIME_MS: f64 = 1.0e7;

// Seed-stream labels, folded into the scenario seed.
const STREAM_JOIN: u64 = 0x6a6f_696e;
const STREAM_MEMBERS: u64 = 0x6d65_6d62;
const STREAM_QUERIES: u64 = 0x7175_6572;
const STREAM_PERTURB: u64 = 0x7065_7274;

fn stream_seed(seed: u64, label: u64) -> u64 {
    seed ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    DelaySpace(#[from] crate::delay_space::DelaySpaceError),
    #[error(transparent)]
    CoordFile(#[from] crate::delay_space::CoordFileError),
    #[error(transparent)]
    Mapping(#[from] crate::sfc::SfcError),
    #[error(transparent)]
    Bloom(#[from] crate::bloom::BloomError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("overlay build did not quiesce within {MAX_SIM_TIME_MS} sim-ms")]
    BuildStalled,
}

/// Where host coordinates come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Generated {
        n: usize,
        low: f64,
        high: f64,
        dim: usize,
        seed: u64,
    },
    File { path: PathBuf },
}

impl DatasetSpec {
    pub fn generated(n: usize, seed: u64) -> Self {
        DatasetSpec::Generated {
            n,
            low: -100.0,
            high: 100.0,
            dim: 2,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Synchronous,
    Asynchronous,
    OffsetSweep,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Synchronous => "synchronous",
            Mode::Asynchronous => "asynchronous",
            Mode::OffsetSweep => "offset_sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scenario_id: String,
    pub dataset: DatasetSpec,
    /// Group members as a percentage of the host count.
    pub density_pct: f64,
    pub groups: u32,
    pub mode: Mode,
    /// Multiples of the member inter-arrival time; 0 is unthrottled and
    /// infinity degenerates to at most one update per link.
    pub update_interval: f64,
    /// Fraction of nodes querying after each arrival (asynchronous).
    pub query_fraction: f64,
    /// Mean coordinate offsets for offset-sweep runs, in ms.
    pub offsets_ms: Vec<f64>,
    /// Keep the unperturbed normalisation constant in sweep rows.
    pub use_original_d: bool,
    pub bloom_bits: u32,
    pub bloom_hashes: u32,
    pub curve_kind: CurveKind,
    pub curve_order: u8,
    pub seed: u64,
    pub trace: bool,
}

impl Scenario {
    pub fn new(scenario_id: impl Into<String>, dataset: DatasetSpec, seed: u64) -> Self {
        Self {
            scenario_id: scenario_id.into(),
            dataset,
            density_pct: 10.0,
            groups: 1,
            mode: Mode::Synchronous,
            update_interval: 0.0,
            query_fraction: 0.1,
            offsets_ms: vec![0.0, 5.0, 10.0, 20.0, 40.0],
            use_original_d: false,
            bloom_bits: crate::bloom::DEFAULT_BLOOM_BITS,
            bloom_hashes: crate::bloom::DEFAULT_BLOOM_HASHES,
            curve_kind: CurveKind::Moore,
            curve_order: crate::sfc::DEFAULT_CURVE_ORDER,
            seed,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Scenario(m));
        if !(self.density_pct > 0.0 && self.density_pct <= 100.0) {
            return bad(format!("density_pct {} not in (0, 100]", self.density_pct));
        }
        if !(self.query_fraction > 0.0 && self.query_fraction <= 1.0) {
            return bad(format!(
                "query_fraction {} not in (0, 1]",
                self.query_fraction
            ));
        }
        if self.groups == 0 {
            return bad("groups must be at least 1".into());
        }
        if self.update_interval < 0.0 || self.update_interval.is_nan() {
            return bad(format!("update_interval {} invalid", self.update_interval));
        }
        if self.mode == Mode::OffsetSweep {
            if self.offsets_ms.is_empty() {
                return bad("offset sweep needs at least one offset".into());
            }
            if self.offsets_ms.iter().any(|o| *o < 0.0 || !o.is_finite()) {
                return bad("offsets must be finite and non-negative".into());
            }
        }
        if let DatasetSpec::Generated {
            n, low, high, dim, ..
        } = &self.dataset
        {
            if *n == 0 {
                return bad("generated dataset needs n >= 1".into());
            }
            if low >= high {
                return bad(format!("dataset range [{low}, {high}] is empty"));
            }
            if *dim == 0 {
                return bad("dataset dimension must be at least 1".into());
            }
        }
        crate::bloom::BloomParams::new(self.bloom_bits, self.bloom_hashes)?;
        CurveParams::new(self.curve_kind, self.curve_order)?;
        Ok(())
    }

    fn bloom(&self) -> BloomParams {
        BloomParams::new(self.bloom_bits, self.bloom_hashes).expect("validated")
    }

    fn curve(&self) -> CurveParams {
        CurveParams::new(self.curve_kind, self.curve_order).expect("validated")
    }
}

/// One completed query, CSV-row shaped.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRow {
    pub query_origin: u32,
    pub group: String,
    pub offset_ms: f64,
    pub hops: u32,
    pub query_time_ms: f64,
    /// Delay to the member the overlay discovered (R).
    pub discovered_ms: Option<f64>,
    /// Delay to the actual closest member (C), by exhaustive scan.
    pub closest_ms: Option<f64>,
    /// (R - C) / D.
    pub error: Option<f64>,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub scenario_id: String,
    pub seed: u64,
    pub n_nodes: u32,
    pub density_pct: f64,
    pub mode: Mode,
    pub update_interval: f64,
    pub rows: Vec<QueryRow>,
    /// Routing-update messages per node per registered member, counted
    /// from the start of the registration phase.
    pub overhead: f64,
    /// Mean pairwise delay of the unperturbed dataset (D).
    pub mean_pairwise_ms: f64,
    pub quiescent: bool,
    pub false_positive_events: u64,
    pub metadata: Vec<(String, String)>,
    pub trace: Option<Vec<u8>>,
}

impl RunMetrics {
    pub fn success_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.success).count() as f64 / self.rows.len() as f64
    }

    /// Mean accuracy error over successful queries, optionally limited
    /// to one offset.
    pub fn mean_error_at(&self, offset_ms: Option<f64>) -> Option<f64> {
        let errs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| offset_ms.is_none_or(|o| r.offset_ms == o))
            .filter_map(|r| r.error)
            .collect();
        if errs.is_empty() {
            None
        } else {
            Some(errs.iter().sum::<f64>() / errs.len() as f64)
        }
    }

    pub fn mean_error(&self) -> Option<f64> {
        self.mean_error_at(None)
    }

    pub fn mean_query_time(&self) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        Some(self.rows.iter().map(|r| r.query_time_ms).sum::<f64>() / self.rows.len() as f64)
    }

    pub fn mean_hops(&self) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        Some(self.rows.iter().map(|r| f64::from(r.hops)).sum::<f64>() / self.rows.len() as f64)
    }

    /// Total forwarding delay over total hops: the mean per-hop delay.
    pub fn mean_per_hop_delay(&self) -> Option<f64> {
        let hops: u64 = self.rows.iter().map(|r| u64::from(r.hops)).sum();
        if hops == 0 {
            return None;
        }
        Some(self.rows.iter().map(|r| r.query_time_ms).sum::<f64>() / hops as f64)
    }
}

/// `(R - C) / D`.
pub fn accuracy_error(
    discovered_ms: f64,
    closest_ms: f64,
    mean_pairwise_ms: f64,
) -> Result<f64, RunError> {
    if mean_pairwise_ms <= 0.0 {
        return Err(RunError::Scenario(format!(
            "mean pairwise delay {mean_pairwise_ms} must be positive"
        )));
    }
    Ok((discovered_ms - closest_ms) / mean_pairwise_ms)
}

/// Exhaustive closest-member scan: minimal delay from `origin` over the
/// members of `group`, ties to the lowest member address. Positions
/// come through the callback so perturbed coordinates are honoured.
pub fn oracle_closest_member<'a>(
    origin: &DelayPoint,
    group: &GroupId,
    members: impl Iterator<Item = &'a MemberRecord>,
    position_of: impl Fn(&MemberRecord) -> DelayPoint,
) -> Option<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for m in members.filter(|m| &m.group == group) {
        let d = delay(origin, &position_of(m)).expect("scenario-wide dimension");
        let better = match best {
            None => true,
            Some((addr, cur)) => d < cur || (d == cur && m.address < addr),
        };
        if better {
            best = Some((m.address, d));
        }
    }
    best
}

/// Least-squares line fit; returns `(slope, intercept, r_squared)`.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Some((slope, intercept, r2))
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<(Vec<DelayPoint>, BoundingBox), RunError> {
    match spec {
        DatasetSpec::Generated {
            n,
            low,
            high,
            dim,
            seed,
        } => {
            let bounds = BoundingBox::square(*low, *high, *dim)?;
            let points = generate_uniform(*n, &bounds, *seed)?;
            Ok((points, bounds))
        }
        DatasetSpec::File { path } => {
            let points = load_coordinates(path)?;
            let bounds = BoundingBox::fit(&points)?;
            Ok((points, bounds))
        }
    }
}

struct BuiltOverlay {
    sim: Simulator,
    n: usize,
    mean_pairwise_ms: f64,
}

/// Hosts join one by one through seeded random bootstrap nodes, each
/// join running to quiescence, then the ring structure is verified
/// outright: every node's immediates must match the sorted coordinate
/// order exactly.
fn build_overlay(s: &Scenario) -> Result<BuiltOverlay, RunError> {
    let (points, bounds) = load_dataset(&s.dataset)?;
    let mean_pairwise_ms = if points.len() >= 2 {
        average_pairwise_delay(&points)?
    } else {
        0.0
    };
    // Construction always runs unthrottled; the scenario's update
    // interval starts with the registration phase.
    let mut sim = Simulator::new(SimConfig {
        bloom: s.bloom(),
        curve: s.curve(),
        bounds,
        update_interval_ms: 0.0,
        expected_nodes: points.len(),
    });
    if s.trace {
        sim.enable_trace();
    }
    let mut join_rng = ChaCha12Rng::seed_from_u64(stream_seed(s.seed, STREAM_JOIN));
    for p in &points {
        sim.add_host(p.clone())?;
    }
    let n = points.len();
    for i in 0..n as u32 {
        let bootstrap = if i == 0 {
            None
        } else {
            Some(join_rng.random_range(0..i))
        };
        sim.schedule_join(sim.clock(), i, bootstrap);
        let status = sim.run_until_quiescent(MAX_SIM_TIME_MS)?;
        if !status.quiescent {
            return Err(RunError::BuildStalled);
        }
        if !sim.node(i).expect("just joined").join_complete() {
            return Err(crate::sim::SimError::Invariant(format!(
                "node {i} drained the queue with its join incomplete"
            ))
            .into());
        }
    }
    // Early joiners built their ladders against a smaller ring; one
    // refresh round against the finished overlay restores everyone's
    // geometric neighbour spread.
    let t = sim.clock();
    for i in 0..n as u32 {
        sim.schedule_control(t, Control::Refresh { host: i });
    }
    let status = sim.run_until_quiescent(MAX_SIM_TIME_MS)?;
    if !status.quiescent {
        return Err(RunError::BuildStalled);
    }
    for i in 0..n as u32 {
        if !sim.node(i).expect("refreshed").join_complete() {
            return Err(crate::sim::SimError::Invariant(format!(
                "node {i} drained the queue with its refresh incomplete"
            ))
            .into());
        }
    }
    sim.verify_ring()?;
    sim.check_invariants()?;
    Ok(BuiltOverlay {
        sim,
        n,
        mean_pairwise_ms,
    })
}

fn group_id(index: u32) -> GroupId {
    GroupId::new(format!("g{index}").into_bytes()).expect("non-empty")
}

/// Partial Fisher-Yates: the first `count` entries of a seeded
/// permutation of `0..n`.
fn sample_indices(n: usize, count: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..count.min(n) {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

/// Seeded member hosts: a sample of the overlay hosts themselves, so a
/// member registers with the node it is co-located with. Groups are
/// assigned round-robin across the sample.
fn sample_members(s: &Scenario, sim: &Simulator, n: usize) -> Vec<MemberRecord> {
    let count = ((s.density_pct / 100.0 * n as f64).round() as usize).clamp(1, n);
    let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(s.seed, STREAM_MEMBERS));
    sample_indices(n, count, &mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, host)| MemberRecord {
            group: group_id(i as u32 % s.groups),
            address: host as u64,
            position: sim.position(host as u32).clone(),
            ring: sim.host_ring(host as u32),
        })
        .collect()
}

fn metadata_for(s: &Scenario, n: usize, d: f64) -> Vec<(String, String)> {
    let mut md = vec![
        ("generator".into(), GENERATOR_NAME.into()),
        ("scenario_id".into(), s.scenario_id.clone()),
        ("mode".into(), s.mode.as_str().into()),
        ("seed".into(), s.seed.to_string()),
        ("n_nodes".into(), n.to_string()),
        ("density_pct".into(), s.density_pct.to_string()),
        ("groups".into(), s.groups.to_string()),
        ("update_interval".into(), s.update_interval.to_string()),
        ("inter_arrival_ms".into(), INTER_ARRIVAL_MS.to_string()),
        ("query_fraction".into(), s.query_fraction.to_string()),
        ("bloom_m".into(), s.bloom_bits.to_string()),
        ("bloom_k".into(), s.bloom_hashes.to_string()),
        ("curve".into(), s.curve_kind.as_str().into()),
        ("curve_order".into(), s.curve_order.to_string()),
        ("query_ttl".into(), "64".into()),
        ("mean_pairwise_ms".into(), d.to_string()),
    ];
    match &s.dataset {
        DatasetSpec::Generated {
            n,
            low,
            high,
            dim,
            seed,
        } => {
            md.push(("dataset".into(), "generated".into()));
            md.push(("dataset_n".into(), n.to_string()));
            md.push(("dataset_range".into(), format!("{low}..{high}")));
            md.push(("dataset_dim".into(), dim.to_string()));
            md.push(("dataset_seed".into(), seed.to_string()));
        }
        DatasetSpec::File { path } => {
            md.push(("dataset".into(), "file".into()));
            md.push(("dataset_path".into(), path.display().to_string()));
        }
    }
    if s.mode == Mode::OffsetSweep {
        md.push((
            "offsets_ms".into(),
            s.offsets_ms
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(" "),
        ));
        md.push(("use_original_d".into(), s.use_original_d.to_string()));
    }
    md
}

/// Entry point: dispatches on the scenario mode.
pub fn run_scenario(s: &Scenario) -> Result<RunMetrics, RunError> {
    s.validate()?;
    match s.mode {
        Mode::Synchronous => run_synchronous(s),
        Mode::Asynchronous => run_asynchronous(s),
        Mode::OffsetSweep => run_offset_sweep(s),
    }
}

/// Builds a row for one completed query against the oracle.
fn row_for(sim: &Simulator, q: &crate::sim::CompletedQuery, d: f64, offset_ms: f64) -> QueryRow {
    let origin_pos = sim.position(q.origin);
    let members = &sim.members()[..q.members_at_issue];
    let closest = oracle_closest_member(origin_pos, &q.group, members.iter(), |m| {
        sim.position(m.address as u32).clone()
    });
    let discovered = q.found.as_ref().map(|m| {
        delay(origin_pos, sim.position(m.address as u32)).expect("scenario-wide dimension")
    });
    let error = match (discovered, closest) {
        (Some(r), Some((_, c))) => Some((r - c) / d),
        _ => None,
    };
    QueryRow {
        query_origin: q.origin,
        group: q.group.to_string(),
        offset_ms,
        hops: q.hop_dists.len() as u32,
        query_time_ms: q.query_time_ms,
        discovered_ms: discovered,
        closest_ms: closest.map(|(_, c)| c),
        error,
        success: q.found.is_some(),
    }
}

/// In a quiescent overlay with zero observed false positives, every
/// query must succeed and its per-hop ring distances must strictly
/// decrease; anything else is a protocol bug.
fn assert_quiescent_queries(sim: &Simulator, since: usize) -> Result<(), RunError> {
    if sim.false_positive_events() > 0 {
        return Ok(());
    }
    for q in &sim.completed_queries()[since..] {
        if q.found.is_none() {
            return Err(crate::sim::SimError::Invariant(format!(
                "query {} from {} failed in a quiescent, fp-free overlay",
                q.query_id, q.origin
            ))
            .into());
        }
        for w in q.hop_dists.windows(2) {
            if w[1] >= w[0] {
                return Err(crate::sim::SimError::Invariant(format!(
                    "query {} hop distances not strictly decreasing: {:?}",
                    q.query_id, q.hop_dists
                ))
                .into());
            }
        }
    }
    Ok(())
}

/// Runs one synchronous scenario per density, sharing a single overlay
/// build: cloning the quiescent built simulator replays exactly what
/// rebuilding would produce, since registrations only start afterwards.
pub fn run_synchronous_column(
    base: &Scenario,
    densities: &[f64],
) -> Result<Vec<RunMetrics>, RunError> {
    base.validate()?;
    if base.mode != Mode::Synchronous {
        return Err(RunError::Scenario(
            "density columns apply to synchronous runs".into(),
        ));
    }
    let built = build_overlay(base)?;
    densities
        .iter()
        .map(|&density| {
            let mut s = base.clone();
            s.density_pct = density;
            s.validate()?;
            finish_synchronous(&s, built.sim.clone(), built.n, built.mean_pairwise_ms)
        })
        .collect()
}

fn run_synchronous(s: &Scenario) -> Result<RunMetrics, RunError> {
    let built = build_overlay(s)?;
    finish_synchronous(s, built.sim, built.n, built.mean_pairwise_ms)
}

fn finish_synchronous(
    s: &Scenario,
    mut sim: Simulator,
    n: usize,
    d: f64,
) -> Result<RunMetrics, RunError> {
    sim.set_update_interval(s.update_interval * INTER_ARRIVAL_MS);
    let members = sample_members(s, &sim, n);
    let updates_before = sim.counters().route_updates_sent;
    let t0 = sim.clock();
    for m in &members {
        sim.schedule_register(t0, m.clone(), m.address as u32);
    }
    let reg_status = sim.run_until_quiescent(MAX_SIM_TIME_MS)?;

    let groups: Vec<GroupId> = (0..s.groups).map(group_id).collect();
    let tq = sim.clock();
    for origin in 0..n as u32 {
        for g in &groups {
            sim.schedule_query(tq, origin, g.clone());
        }
    }
    let query_status = sim.run_until_quiescent(MAX_SIM_TIME_MS)?;
    let quiescent = reg_status.quiescent && query_status.quiescent;
    sim.check_invariants()?;
    if quiescent {
        assert_quiescent_queries(&sim, 0)?;
    }

    let overhead = (sim.counters().route_updates_sent - updates_before) as f64
        / (n as f64 * members.len() as f64);
    let rows: Vec<QueryRow> = sim
        .completed_queries()
        .iter()
        .map(|q| row_for(&sim, q, d, 0.0))
        .collect();
    let fp = sim.false_positive_events();
    let trace = s.trace.then(|| sim.take_trace());
    Ok(RunMetrics {
        scenario_id: s.scenario_id.clone(),
        seed: s.seed,
        n_nodes: n as u32,
        density_pct: s.density_pct,
        mode: s.mode,
        update_interval: s.update_interval,
        rows,
        overhead,
        mean_pairwise_ms: d,
        quiescent,
        false_positive_events: fp,
        metadata: metadata_for(s, n, d),
        trace,
    })
}

/// Runs one asynchronous scenario per update interval, sharing a
/// single overlay build: construction is unthrottled and identical for
/// every interval, so cloning the built simulator replays exactly what
/// an independent run would produce.
pub fn run_asynchronous_column(
    base: &Scenario,
    intervals: &[f64],
) -> Result<Vec<RunMetrics>, RunError> {
    base.validate()?;
    if base.mode != Mode::Asynchronous {
        return Err(RunError::Scenario(
            "interval columns apply to asynchronous runs".into(),
        ));
    }
    let built = build_overlay(base)?;
    intervals
        .iter()
        .map(|&interval| {
            let mut s = base.clone();
            s.update_interval = interval;
            s.validate()?;
            finish_asynchronous(&s, built.sim.clone(), built.n, built.mean_pairwise_ms)
        })
        .collect()
}

fn run_asynchronous(s: &Scenario) -> Result<RunMetrics, RunError> {
    let built = build_overlay(s)?;
    finish_asynchronous(s, built.sim, built.n, built.mean_pairwise_ms)
}

fn finish_asynchronous(
    s: &Scenario,
    mut sim: Simulator,
    n: usize,
    d: f64,
) -> Result<RunMetrics, RunError> {
    sim.set_update_interval(s.update_interval * INTER_ARRIVAL_MS);
    let members = sample_members(s, &sim, n);
    let updates_before = sim.counters().route_updates_sent;
    let mut query_rng = ChaCha12Rng::seed_from_u64(stream_seed(s.seed, STREAM_QUERIES));
    let per_wave = ((s.query_fraction * n as f64).round() as usize).clamp(1, n);
    let t0 = sim.clock();
    for (k, m) in members.iter().enumerate() {
        let arrive = t0 + (k as f64 + 1.0) * INTER_ARRIVAL_MS;
        sim.schedule_register(arrive, m.clone(), m.address as u32);
        // Each intermediate state is sampled just before the next
        // arrival, by a fresh seeded subset of nodes.
        let ask = arrive + QUERY_PHASE_OF_ARRIVAL * INTER_ARRIVAL_MS;
        for origin in sample_indices(n, per_wave, &mut query_rng) {
            sim.schedule_query(ask, origin as u32, m.group.clone());
        }
    }
    let status = sim.run_until_quiescent(MAX_SIM_TIME_MS)?;
    sim.check_invariants()?;

    let overhead = (sim.counters().route_updates_sent - updates_before) as f64
        / (n as f64 * members.len() as f64);
    let rows: Vec<QueryRow> = sim
        .completed_queries()
        .iter()
        .map(|q| row_for(&sim, q, d, 0.0))
        .collect();
    let fp = sim.false_positive_events();
    let trace = s.trace.then(|| sim.take_trace());
    Ok(RunMetrics {
        scenario_id: s.scenario_id.clone(),
        seed: s.seed,
        n_nodes: n as u32,
        density_pct: s.density_pct,
        mode: s.mode,
        update_interval: s.update_interval,
        rows,
        overhead,
        mean_pairwise_ms: d,
        quiescent: status.quiescent,
        false_positive_events: fp,
        metadata: metadata_for(s, n, d),
        trace,
    })
}

/// Synchronous build and registration once, then per offset: clone the
/// quiescent overlay, displace every host coordinate while the ring
/// keeps its stale positions, and re-issue one query per node. True
/// delays, the closest-member oracle and (unless `use_original_d`) the
/// normalisation constant all follow the perturbed positions.
fn run_offset_sweep(s: &Scenario) -> Result<RunMetrics, RunError> {
    let built = build_overlay(s)?;
    let mut base = built.sim;
    let n = built.n;
    let d0 = built.mean_pairwise_ms;

    base.set_update_interval(s.update_interval * INTER_ARRIVAL_MS);
    let members = sample_members(s, &base, n);
    let updates_before = base.counters().route_updates_sent;
    let t0 = base.clock();
    for m in &members {
        base.schedule_register(t0, m.clone(), m.address as u32);
    }
    let reg_status = base.run_until_quiescent(MAX_SIM_TIME_MS)?;
    base.check_invariants()?;
    let overhead = (base.counters().route_updates_sent - updates_before) as f64
        / (n as f64 * members.len() as f64);
    let build_trace = s.trace.then(|| base.take_trace());

    let groups: Vec<GroupId> = (0..s.groups).map(group_id).collect();
    let mut rows = Vec::new();
    let mut quiescent = reg_status.quiescent;
    let mut fp = base.false_positive_events();
    let mut trace = build_trace;
    for (oi, &offset) in s.offsets_ms.iter().enumerate() {
        let mut sim = base.clone();
        if s.trace {
            sim.enable_trace();
        }
        let queries_before = sim.completed_queries().len();
        sim.schedule_control(
            sim.clock(),
            Control::Perturb {
                mean_offset: offset,
                seed: stream_seed(s.seed, STREAM_PERTURB).wrapping_add(oi as u64),
            },
        );
        let tq = sim.clock();
        for origin in 0..n as u32 {
            for g in &groups {
                sim.schedule_query(tq, origin, g.clone());
            }
        }
        let status = sim.run_until_quiescent(MAX_SIM_TIME_MS)?;
        quiescent &= status.quiescent;
        sim.check_invariants()?;
        if status.quiescent {
            assert_quiescent_queries(&sim, queries_before)?;
        }
        let d = if s.use_original_d || offset == 0.0 {
            d0
        } else {
            let positions: Vec<DelayPoint> =
                (0..n as u32).map(|i| sim.position(i).clone()).collect();
            average_pairwise_delay(&positions)?
        };
        rows.extend(
            sim.completed_queries()[queries_before..]
                .iter()
                .map(|q| row_for(&sim, q, d, offset)),
        );
        fp += sim.false_positive_events();
        if let Some(buf) = trace.as_mut() {
            buf.extend_from_slice(format!("# offset={offset}\n").as_bytes());
            buf.extend_from_slice(&sim.take_trace());
        }
    }

    Ok(RunMetrics {
        scenario_id: s.scenario_id.clone(),
        seed: s.seed,
        n_nodes: n as u32,
        density_pct: s.density_pct,
        mode: s.mode,
        update_interval: s.update_interval,
        rows,
        overhead,
        mean_pairwise_ms: d0,
        quiescent,
        false_positive_events: fp,
        metadata: metadata_for(s, n, d0),
        trace,
    })
}

// ----------------------------------------------------------------------
// CSV output
// ----------------------------------------------------------------------

pub const CSV_HEADER: &str = "scenario_id,seed,n_nodes,density_pct,mode,update_interval,offset_ms,query_origin,group,hops,query_time_ms,R_ms,C_ms,error,success";

/// A fully-typed CSV record; floats round-trip exactly through the
/// shortest-representation formatting.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRecord {
    pub scenario_id: String,
    pub seed: u64,
    pub n_nodes: u32,
    pub density_pct: f64,
    pub mode: String,
    pub update_interval: f64,
    pub offset_ms: f64,
    pub query_origin: u32,
    pub group: String,
    pub hops: u32,
    pub query_time_ms: f64,
    pub r_ms: Option<f64>,
    pub c_ms: Option<f64>,
    pub error: Option<f64>,
    pub success: bool,
}

impl RunMetrics {
    pub fn csv_records(&self) -> impl Iterator<Item = CsvRecord> + '_ {
        self.rows.iter().map(|r| CsvRecord {
            scenario_id: self.scenario_id.clone(),
            seed: self.seed,
            n_nodes: self.n_nodes,
            density_pct: self.density_pct,
            mode: self.mode.as_str().to_string(),
            update_interval: self.update_interval,
            offset_ms: r.offset_ms,
            query_origin: r.query_origin,
            group: r.group.clone(),
            hops: r.hops,
            query_time_ms: r.query_time_ms,
            r_ms: r.discovered_ms,
            c_ms: r.closest_ms,
            error: r.error,
            success: r.success,
        })
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes per-run comment lines, merged metadata comment lines, the
/// column header and one line per query. Identical metrics produce
/// identical bytes.
pub fn write_results<W: Write>(metrics: &[&RunMetrics], mut w: W) -> io::Result<()> {
    for m in metrics {
        writeln!(
            w,
            "# run {} seed {}: overhead = {}, mean_pairwise_ms = {}, quiescent = {}, false_positives = {}",
            m.scenario_id, m.seed, m.overhead, m.mean_pairwise_ms, m.quiescent, m.false_positive_events
        )?;
    }
    let mut merged: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for m in metrics {
        for (k, v) in &m.metadata {
            let slot = merged.entry(k.clone()).or_default();
            if !slot.contains(v) {
                slot.push(v.clone());
            }
        }
    }
    for (k, vs) in &merged {
        if vs.len() == 1 {
            writeln!(w, "# {} = {}", k, vs[0])?;
        } else {
            writeln!(w, "# {} = [{}]", k, vs.join(", "))?;
        }
    }
    writeln!(w, "{CSV_HEADER}")?;
    for m in metrics {
        for r in m.csv_records() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.scenario_id,
                r.seed,
                r.n_nodes,
                r.density_pct,
                r.mode,
                r.update_interval,
                r.offset_ms,
                r.query_origin,
                r.group,
                r.hops,
                r.query_time_ms,
                opt_f64(r.r_ms),
                opt_f64(r.c_ms),
                opt_f64(r.error),
                r.success
            )?;
        }
    }
    Ok(())
}

pub fn write_results_to_path(metrics: &[&RunMetrics], path: &std::path::Path) -> io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    write_results(metrics, &mut file)?;
    file.flush()
}

#[derive(Debug, Error)]
pub enum CsvReadError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Parses a results file back into comment lines and typed records;
/// the inverse of `write_results`.
pub fn read_results<R: BufRead>(reader: R) -> Result<(Vec<String>, Vec<CsvRecord>), CsvReadError> {
    let mut comments = Vec::new();
    let mut records = Vec::new();
    let mut saw_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.starts_with('#') {
            comments.push(line);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != CSV_HEADER {
                return Err(CsvReadError::Parse {
                    line: line_no,
                    reason: format!("unexpected header {line:?}"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(CsvReadError::Parse {
                line: line_no,
                reason: format!("expected 15 fields, got {}", fields.len()),
            });
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64, CsvReadError> {
            s.parse().map_err(|_| CsvReadError::Parse {
                line: line_no,
                reason: format!("bad {what}: {s:?}"),
            })
        };
        let parse_opt = |s: &str, what: &str| -> Result<Option<f64>, CsvReadError> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse_f64(s, what).map(Some)
            }
        };
        let parse_int = |s: &str, what: &str| -> Result<u64, CsvReadError> {
            s.parse().map_err(|_| CsvReadError::Parse {
                line: line_no,
                reason: format!("bad {what}: {s:?}"),
            })
        };
        records.push(CsvRecord {
            scenario_id: fields[0].to_string(),
            seed: parse_int(fields[1], "seed")?,
            n_nodes: parse_int(fields[2], "n_nodes")? as u32,
            density_pct: parse_f64(fields[3], "density_pct")?,
            mode: fields[4].to_string(),
            update_interval: parse_f64(fields[5], "update_interval")?,
            offset_ms: parse_f64(fields[6], "offset_ms")?,
            query_origin: parse_int(fields[7], "query_origin")? as u32,
            group: fields[8].to_string(),
            hops: parse_int(fields[9], "hops")? as u32,
            query_time_ms: parse_f64(fields[10], "query_time_ms")?,
            r_ms: parse_opt(fields[11], "R_ms")?,
            c_ms: parse_opt(fields[12], "C_ms")?,
            error: parse_opt(fields[13], "error")?,
            success: match fields[14] {
                "true" => true,
                "false" => false,
                other => {
                    return Err(CsvReadError::Parse {
                        line: line_no,
                        reason: format!("bad success flag {other:?}"),
                    })
                }
            },
        });
    }
    Ok((comments, records))
}

// ----------------------------------------------------------------------
// Sweeps
// ----------------------------------------------------------------------

/// Cross-product of scenario axes; empty axes reuse the base value.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: Scenario,
    pub n_nodes: Vec<usize>,
    pub density_pct: Vec<f64>,
    pub update_interval: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// Expands the axes into concrete scenarios. Each sweep seed drives
    /// the protocol streams directly and offsets the dataset seed, so
    /// replications differ in both topology and sampling.
    pub fn expand(&self) -> Result<Vec<Scenario>, RunError> {
        if self.seeds.is_empty() {
            return Err(RunError::Scenario("sweep needs at least one seed".into()));
        }
        if matches!(self.base.dataset, DatasetSpec::File { .. }) && !self.n_nodes.is_empty() {
            return Err(RunError::Scenario(
                "n_nodes axis cannot apply to a file dataset".into(),
            ));
        }
        let ns: Vec<Option<usize>> = if self.n_nodes.is_empty() {
            vec![None]
        } else {
            self.n_nodes.iter().copied().map(Some).collect()
        };
        let densities = if self.density_pct.is_empty() {
            vec![self.base.density_pct]
        } else {
            self.density_pct.clone()
        };
        let intervals = if self.update_interval.is_empty() {
            vec![self.base.update_interval]
        } else {
            self.update_interval.clone()
        };
        let mut out = Vec::new();
        for &n in &ns {
            for &density in &densities {
                for &interval in &intervals {
                    for &seed in &self.seeds {
                        let mut s = self.base.clone();
                        if let DatasetSpec::Generated {
                            n: base_n,
                            low,
                            high,
                            dim,
                            seed: ds,
                        } = &self.base.dataset
                        {
                            s.dataset = DatasetSpec::Generated {
                                n: n.unwrap_or(*base_n),
                                low: *low,
                                high: *high,
                                dim: *dim,
                                seed: ds.wrapping_add(seed),
                            };
                        }
                        s.density_pct = density;
                        s.update_interval = interval;
                        s.seed = seed;
                        s.scenario_id = format!(
                            "{}_n{}_d{}_u{}",
                            self.base.scenario_id,
                            n.map(|v| v.to_string()).unwrap_or_else(|| "file".into()),
                            density,
                            interval
                        );
                        s.validate()?;
                        out.push(s);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Runs every expanded scenario, spreading independent runs over up to
/// `jobs` worker threads. Results come back in expansion order, so the
/// output does not depend on the degree of parallelism.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<RunMetrics>, RunError> {
    let scenarios = spec.expand()?;
    run_scenarios(&scenarios, jobs)
}

/// Parallel runner used by sweeps and the acceptance suite.
pub fn run_scenarios(scenarios: &[Scenario], jobs: usize) -> Result<Vec<RunMetrics>, RunError> {
    let jobs = jobs.max(1).min(scenarios.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<RunMetrics, RunError>>>> =
        scenarios.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= scenarios.len() {
                    break;
                }
                let outcome = run_scenario(&scenarios[idx]);
                *results[idx].lock().expect("poisoned") = Some(outcome);
            });
        }
    });
    results
        .into_iter()
        .map(|slot| slot.into_inner().expect("poisoned").expect("worker filled"))
        .collect()
}
