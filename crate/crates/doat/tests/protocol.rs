//! Protocol-level integration: joins, propagation, churn and repair
//! driven through the real simulator.

use doat::delay_space::{generate_uniform, DelayPoint};
use doat::experiments::{run_scenario, DatasetSpec, Mode, Scenario};
use doat::sim::{Control, SimConfig, Simulator};
use doat::{BloomParams, BoundingBox, CurveParams, Direction, GroupId, MemberRecord};

fn sim_config(expected: usize) -> SimConfig {
    SimConfig {
        bloom: BloomParams::default(),
        curve: CurveParams::default(),
        bounds: BoundingBox::square(-100.0, 100.0, 2).unwrap(),
        update_interval_ms: 0.0,
        expected_nodes: expected,
    }
}

fn gid(s: &str) -> GroupId {
    GroupId::new(s.as_bytes().to_vec()).unwrap()
}

/// Sequentially joins every host, quiescing between joins, with a
/// refresh round at the end (mirrors the experiment harness).
fn build(points: &[DelayPoint]) -> Simulator {
    let mut sim = Simulator::new(sim_config(points.len()));
    for p in points {
        sim.add_host(p.clone()).unwrap();
    }
    for i in 0..points.len() as u32 {
        sim.schedule_join(sim.clock(), i, if i == 0 { None } else { Some(0) });
        let status = sim.run_until_quiescent(1e9).unwrap();
        assert!(status.quiescent);
        assert!(sim.node(i).unwrap().join_complete());
    }
    let t = sim.clock();
    for i in 0..points.len() as u32 {
        sim.schedule_control(t, Control::Refresh { host: i });
    }
    sim.run_until_quiescent(1e9).unwrap();
    sim.verify_ring().unwrap();
    sim.check_invariants().unwrap();
    sim
}

fn member_at(sim: &Simulator, host: u32, group: &GroupId) -> MemberRecord {
    MemberRecord {
        group: group.clone(),
        address: host as u64,
        position: sim.position(host).clone(),
        ring: sim.host_ring(host),
    }
}

fn register_and_quiesce(sim: &mut Simulator, host: u32, group: &GroupId) {
    let m = member_at(sim, host, group);
    sim.schedule_register(sim.clock(), m, host);
    let status = sim.run_until_quiescent(1e9).unwrap();
    assert!(status.quiescent);
}

fn query_all(sim: &mut Simulator, group: &GroupId) -> (usize, usize) {
    let before = sim.completed_queries().len();
    let t = sim.clock();
    let hosts: Vec<u32> = sim.live_nodes().map(|n| n.id().tiebreak).collect();
    for h in &hosts {
        sim.schedule_query(t, *h, group.clone());
    }
    let status = sim.run_until_quiescent(1e9).unwrap();
    assert!(status.quiescent);
    let fresh = &sim.completed_queries()[before..];
    let succeeded = fresh.iter().filter(|q| q.found.is_some()).count();
    (succeeded, fresh.len())
}

#[test]
fn probe_targets_match_the_quarter_ring_example() {
    // A node at 0.43 probing at distance 0.25 must target 0.68
    // clockwise and 0.18 anticlockwise; the join trace shows both.
    use doat::sfc::{ring_target, RingCoord};
    let cw = ring_target(RingCoord::new(0.43), 0.25, Direction::Clockwise);
    let acw = ring_target(RingCoord::new(0.43), 0.25, Direction::Anticlockwise);
    assert!((cw.value() - 0.68).abs() < 1e-12);
    assert!((acw.value() - 0.18).abs() < 1e-12);
}

#[test]
fn line_topology_propagates_to_the_far_end() {
    // Eight hosts on a line; registration at one end must reach every
    // node's routing state, so all queries succeed and in particular
    // the far end routes toward the registrar.
    let points: Vec<DelayPoint> = (0..8).map(|i| DelayPoint::xy(-70.0 + 20.0 * i as f64, -70.0)).collect();
    let mut sim = build(&points);
    let g = gid("line");
    // Register at the leftmost host's node.
    register_and_quiesce(&mut sim, 0, &g);
    let (ok, total) = query_all(&mut sim, &g);
    assert_eq!((ok, total), (8, 8));
    // Every node's aggregate over its full table contains the group.
    for node in sim.live_nodes() {
        if node.id().tiebreak == 0 {
            continue;
        }
        let table_len = node.table().len();
        let aggregate = node.announcement(table_len);
        assert!(
            aggregate.exact.contains(&g),
            "node {} cannot reach the group",
            node.id()
        );
    }
}

#[test]
fn three_node_ring_heals_after_middle_leave() {
    let points = vec![
        DelayPoint::xy(-50.0, -50.0),
        DelayPoint::xy(0.0, 60.0),
        DelayPoint::xy(70.0, -20.0),
    ];
    let mut sim = build(&points);
    // Leave the node in the middle of the ring order.
    let mut ids: Vec<_> = sim.live_nodes().map(|n| n.id()).collect();
    ids.sort();
    let middle = ids[1].tiebreak;
    sim.schedule_control(sim.clock(), Control::Leave { host: middle });
    sim.run_until_quiescent(1e9).unwrap();
    sim.verify_ring().unwrap();
    let rest: Vec<u32> = sim.live_nodes().map(|n| n.id().tiebreak).collect();
    assert_eq!(rest.len(), 2);
    for h in rest {
        let node = sim.node(h).unwrap();
        assert_eq!(node.table().len(), 1, "stale entries survived the leave");
    }
}

#[test]
fn leave_keeps_registered_groups_reachable() {
    let points = generate_uniform(100, &BoundingBox::square(-100.0, 100.0, 2).unwrap(), 21).unwrap();
    let mut sim = build(&points);
    let g = gid("stay");
    register_and_quiesce(&mut sim, 17, &g);
    register_and_quiesce(&mut sim, 60, &g);

    // The registrar of host 17's record leaves; its records are
    // re-registered on the members' behalf.
    let registrar = sim
        .live_nodes()
        .find(|n| !n.registry().is_empty())
        .unwrap()
        .id()
        .tiebreak;
    sim.schedule_control(sim.clock(), Control::Leave { host: registrar });
    let status = sim.run_until_quiescent(1e9).unwrap();
    assert!(status.quiescent);
    sim.check_invariants().unwrap();

    let (ok, total) = query_all(&mut sim, &g);
    assert_eq!(ok, total, "{ok}/{total} queries succeeded after the leave");
    assert_eq!(total, 99);
}

#[test]
fn failure_swaps_in_alternates() {
    let points = generate_uniform(50, &BoundingBox::square(-100.0, 100.0, 2).unwrap(), 33).unwrap();
    let mut sim = build(&points);
    let dead_host = 25u32;
    let dead_id = sim.node(dead_host).unwrap().id();
    let holders: Vec<u32> = sim
        .live_nodes()
        .filter(|n| n.has_neighbor(dead_id))
        .map(|n| n.id().tiebreak)
        .collect();
    assert!(!holders.is_empty());
    sim.schedule_control(sim.clock(), Control::Fail { host: dead_host });
    let status = sim.run_until_quiescent(1e9).unwrap();
    assert!(status.quiescent);
    for h in holders {
        assert!(
            !sim.node(h).unwrap().has_neighbor(dead_id),
            "node {h} kept the dead neighbour"
        );
    }
    sim.verify_ring().unwrap();
    sim.check_invariants().unwrap();
}

#[test]
fn drift_below_threshold_keeps_topology() {
    let points = generate_uniform(30, &BoundingBox::square(-100.0, 100.0, 2).unwrap(), 8).unwrap();
    let mut sim = build(&points);
    let before = sim.counters().sent;
    let old_ring = sim.node(5).unwrap().id().ring;
    // A sub-threshold wiggle moves the position only.
    let mut coords = sim.position(5).coords().to_vec();
    coords[0] += 0.5;
    sim.schedule_control(
        sim.clock(),
        Control::Drift {
            host: 5,
            new_position: DelayPoint::new(coords).unwrap(),
            threshold: 0.25,
        },
    );
    sim.run_until_quiescent(1e9).unwrap();
    assert_eq!(sim.counters().sent, before, "sub-threshold drift sent messages");
    assert_eq!(sim.node(5).unwrap().id().ring, old_ring);
}

#[test]
fn drift_past_threshold_reinserts_and_groups_stay_reachable() {
    let points = generate_uniform(60, &BoundingBox::square(-100.0, 100.0, 2).unwrap(), 13).unwrap();
    let mut sim = build(&points);
    let g = gid("drift");
    register_and_quiesce(&mut sim, 20, &g);
    register_and_quiesce(&mut sim, 40, &g);

    // Drag host 20 to the opposite corner: past any sane threshold.
    let target = DelayPoint::xy(95.0, 95.0);
    let old_ring = sim.node(20).unwrap().id().ring;
    sim.schedule_control(
        sim.clock(),
        Control::Drift {
            host: 20,
            new_position: target,
            threshold: 0.01,
        },
    );
    let status = sim.run_until_quiescent(1e9).unwrap();
    assert!(status.quiescent);
    let node = sim.node(20).unwrap();
    assert!(node.join_complete());
    assert_ne!(node.id().ring, old_ring, "ring coordinate did not move");
    sim.verify_ring().unwrap();
    sim.check_invariants().unwrap();

    let (ok, total) = query_all(&mut sim, &g);
    assert_eq!(ok, total, "{ok}/{total} queries succeeded after the drift");
}

#[test]
fn post_failure_queries_keep_high_success() {
    // One failure per run, then one query per surviving node; repair
    // quiescence must keep success at 100% here (the failed node may
    // take its registry down with it, but other members of the single
    // group remain, and these seeds never place every member on the
    // failed node).
    let mut total_ok = 0usize;
    let mut total_q = 0usize;
    for seed in 1..=10u64 {
        let points =
            generate_uniform(500, &BoundingBox::square(-100.0, 100.0, 2).unwrap(), seed).unwrap();
        let mut sim = build(&points);
        let g = gid("churn");
        // density 5%: 25 members co-located with sampled hosts
        for k in 0..25u32 {
            let host = (k * 19 + seed as u32 * 7) % 500;
            let m = member_at(&sim, host, &g);
            sim.schedule_register(sim.clock(), m, host);
        }
        sim.run_until_quiescent(1e9).unwrap();
        let dead = (seed as u32 * 37) % 500;
        sim.schedule_control(sim.clock(), Control::Fail { host: dead });
        sim.run_until_quiescent(1e9).unwrap();
        let (ok, total) = query_all(&mut sim, &g);
        total_ok += ok;
        total_q += total;
    }
    let rate = total_ok as f64 / total_q as f64;
    assert!(rate >= 0.99, "post-failure success rate {rate}");
}

#[test]
fn neighbor_count_grows_logarithmically() {
    // Mean table size over 10 seeds at N=1000. The ladder probes about
    // 2*log2(N) targets per join, every link is bidirectional, and the
    // build-end refresh tops early joiners up, so the measured mean
    // sits between 4 and 5 times log2(N): 45.39 over these seeds,
    // frozen here with a little headroom either side.
    let mut means = Vec::new();
    for seed in 1..=10u64 {
        let points =
            generate_uniform(1000, &BoundingBox::square(-100.0, 100.0, 2).unwrap(), seed).unwrap();
        let sim = build(&points);
        let total: usize = sim.live_nodes().map(|n| n.table().len()).sum();
        means.push(total as f64 / 1000.0);
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    let log2n = 1000f64.log2();
    assert!(
        mean >= 3.5 * log2n && mean <= 5.5 * log2n,
        "mean degree {mean} outside the frozen logarithmic band"
    );
}

#[test]
fn multi_group_runs_keep_groups_separate() {
    let mut s = Scenario::new("multi", DatasetSpec::generated(80, 5), 5);
    s.density_pct = 20.0;
    s.groups = 4;
    s.mode = Mode::Synchronous;
    let m = run_scenario(&s).unwrap();
    assert!(m.quiescent);
    assert_eq!(m.success_rate(), 1.0);
    // 80 origins x 4 groups.
    assert_eq!(m.rows.len(), 320);
    for g in ["g0", "g1", "g2", "g3"] {
        assert!(m.rows.iter().any(|r| r.group == g));
    }
}

#[test]
fn unregistered_group_reports_not_found_at_origin() {
    let points = generate_uniform(20, &BoundingBox::square(-100.0, 100.0, 2).unwrap(), 2).unwrap();
    let mut sim = build(&points);
    let t = sim.clock();
    sim.schedule_query(t, 3, gid("ghost"));
    sim.run_until_quiescent(1e9).unwrap();
    let q = sim.completed_queries().last().unwrap();
    assert!(q.found.is_none());
    assert!(!q.ttl_failure);
    assert_eq!(q.hop_dists.len(), 0, "empty filters must not route anywhere");
}
