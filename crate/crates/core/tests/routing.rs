mod common;

use std::collections::{BTreeMap, BTreeSet};

use reshard_core::routing::{
    plan_optimizer, plan_parameters, plan_transition, resolve_peers, validate_plan, validate_transition, Fragment,
    RoutingPlan, TransitionOptions, Violation, WorldMap,
};
use reshard_core::vps::{build_vps, ModelSpec, ParallelConfig, PrecisionPolicy, RegionSet, TensorSpec, Vps};
use reshard_core::Topology;

const MIXED: PrecisionPolicy = PrecisionPolicy::MixedBf16Fp32;

fn flat(vps: &Vps, r: &RegionSet) -> BTreeSet<u64> {
    vps.to_flat(r).spans().iter().flat_map(|s| s.lo..s.hi).collect()
}

fn four_device_model() -> ModelSpec {
    ModelSpec::new(
        vec![
            TensorSpec::dense("l0.w1", &[8, 4], 0).tp_sharded(0),
            TensorSpec::dense("l0.w2", &[4, 8], 0).tp_sharded(1),
            TensorSpec::dense("l1.w1", &[8, 4], 1).tp_sharded(0),
            TensorSpec::dense("l1.w2", &[4, 8], 1).tp_sharded(1),
        ],
        2,
        1,
    )
}

fn resolved(vps: &Vps, plan: RoutingPlan, topo: &Topology) -> RoutingPlan {
    resolve_peers(vps, &plan, topo).unwrap()
}

#[test]
fn identity_transition_retains_everything() {
    let vps = build_vps(ModelSpec::toy_transformer(2, 8, 1)).unwrap();
    let cfg = ParallelConfig::new(2, 2, 1);
    let plan = plan_parameters(&vps, &cfg, &cfg, &WorldMap::identity(4), MIXED).unwrap();
    for d in &plan.devices {
        assert!(d.send_set.is_empty() && d.recv_set.is_empty());
        assert_eq!(d.retain, d.src);
    }
    let plan = resolved(&vps, plan, &Topology::new(1, 4));
    assert_eq!(plan.bytes_moved(), 0);
}

#[test]
fn four_device_rank3_has_all_three_categories() {
    let vps = build_vps(four_device_model()).unwrap();
    let src = ParallelConfig::new(1, 2, 2);
    let dst = ParallelConfig::new(1, 4, 1);
    let plan = plan_parameters(&vps, &src, &dst, &WorldMap::identity(4), MIXED).unwrap();
    let d3 = &plan.devices[3];
    assert!(!d3.send_set.is_empty() && !d3.retain.is_empty() && !d3.recv_set.is_empty());
    let plan = resolved(&vps, plan, &Topology::new(1, 4));
    let r = validate_plan(&plan, &vps, &dst).unwrap();
    assert!(r.is_ok(), "{:?}", r.violations);
    assert!(!plan.devices[3].send.is_empty() && !plan.devices[3].recv.is_empty());
}

#[test]
fn nested_tp_split() {
    let vps = build_vps(ModelSpec::new(vec![TensorSpec::dense("W", &[4, 4], 0).tp_sharded(0)], 1, 1)).unwrap();
    let src = ParallelConfig::new(1, 2, 1);
    let dst = ParallelConfig::new(1, 4, 1);
    let plan = plan_parameters(&vps, &src, &dst, &WorldMap::resize(2, 4), MIXED).unwrap();
    let plan = resolved(&vps, plan, &Topology::new(1, 4));
    let d0 = &plan.devices[0];
    assert_eq!(flat(&vps, &d0.retain), (0..4).collect());
    assert!(d0.recv.is_empty());
    assert_eq!(d0.send.len(), 1);
    assert_eq!((d0.send[0].dst, flat(&vps, &RegionSet::from_boxes(vps.id(), [match &d0.send[0].fragment {
        Fragment::Box(b) => b.clone(),
        _ => unreachable!(),
    }]))), (1, (4..8).collect()));
}

#[test]
fn proximity_prefers_same_node_holder() {
    let vps = build_vps(ModelSpec::toy_transformer(1, 4, 1)).unwrap();
    // dp=2 on devices 0 (node 0) and 2 (node 1); dp=4 on all four devices.
    let world = WorldMap::explicit(vec![0, 2], vec![0, 1, 2, 3]).unwrap();
    let src = ParallelConfig::new(2, 1, 1);
    let dst = ParallelConfig::new(4, 1, 1);
    let topo = Topology::new(2, 2);
    let plan = resolved(&vps, plan_parameters(&vps, &src, &dst, &world, MIXED).unwrap(), &topo);
    assert!(plan.devices[1].recv.iter().all(|t| t.src == 0));
    assert!(plan.devices[3].recv.iter().all(|t| t.src == 2), "node-1 joiner must source from node 1");
    assert!(plan.devices[1].candidates.iter().all(|(_, c)| c == &vec![0, 2]));
}

#[test]
fn dp_shrink_is_prune_only() {
    let vps = build_vps(ModelSpec::toy_transformer(2, 4, 1)).unwrap();
    let src = ParallelConfig::new(2, 1, 1);
    let dst = ParallelConfig::new(1, 1, 1);
    let plan = resolved(&vps, plan_parameters(&vps, &src, &dst, &WorldMap::resize(2, 1), MIXED).unwrap(), &Topology::new(1, 2));
    assert_eq!(plan.bytes_moved(), 0);
    assert!(!plan.devices[1].send_set.is_empty());
    assert!(plan.devices[1].send.is_empty());
}

#[test]
fn deleting_a_receive_is_reported() {
    let vps = build_vps(four_device_model()).unwrap();
    let src = ParallelConfig::new(1, 2, 2);
    let dst = ParallelConfig::new(1, 4, 1);
    let mut plan = resolved(&vps, plan_parameters(&vps, &src, &dst, &WorldMap::identity(4), MIXED).unwrap(), &Topology::new(1, 4));
    let removed = plan.devices[3].recv.remove(0);
    let report = validate_plan(&plan, &vps, &dst).unwrap();
    assert!(report.violations.iter().any(|v| matches!(v,
        Violation::UncoveredDestination { device: 3, region, .. } if region.contains(removed.fragment.name(&vps)))));
    assert!(report.violations.iter().any(|v| matches!(v, Violation::Unmatched { .. })));
}

#[test]
fn optimizer_moves_unique_shards() {
    let model = four_device_model();
    let vps = build_vps(model.clone()).unwrap();
    let src = ParallelConfig::new(2, 2, 2).with_zero(true);
    let dst = ParallelConfig::new(2, 4, 1).with_zero(true);
    let world = WorldMap::identity(8);
    let raw = plan_optimizer(&vps, &src, &dst, &world, MIXED).unwrap();
    assert!(raw.devices.iter().flat_map(|d| &d.candidates).all(|(_, c)| c.len() == 1));
    let plan = resolved(&vps, raw, &Topology::new(1, 8));
    assert!(plan.bytes_moved() > 0);
    assert!(validate_plan(&plan, &vps, &dst).unwrap().is_ok());
    // every moved element goes from its src owner to its dst owner
    for t in plan.transfers() {
        for k in t.fragment.elements(&vps) {
            assert!(common::optimizer_set(&model, &src, t.src).contains(&k));
            assert!(common::optimizer_set(&model, &dst, t.dst).contains(&k));
        }
    }
}

#[test]
fn optimizer_unchanged_layout_is_empty() {
    let vps = build_vps(ModelSpec::toy_transformer(2, 8, 1)).unwrap();
    let cfg = ParallelConfig::new(2, 2, 1).with_zero(true);
    let plan = plan_optimizer(&vps, &cfg, &cfg, &WorldMap::identity(4), MIXED).unwrap();
    assert!(plan.devices.iter().all(|d| d.recv_set.is_empty() && d.send_set.is_empty()));
}

#[test]
fn optimizer_dp_two_to_four_matches_owner_table() {
    let model = ModelSpec::new(vec![TensorSpec::dense("flat", &[100], 0)], 1, 1);
    let vps = build_vps(model).unwrap();
    let src = ParallelConfig::new(2, 1, 1).with_zero(true);
    let dst = ParallelConfig::new(4, 1, 1).with_zero(true);
    let plan = resolved(&vps, plan_optimizer(&vps, &src, &dst, &WorldMap::resize(2, 4), MIXED).unwrap(), &Topology::new(1, 4));
    // owner tables: src owner = k / 50, dst owner = k / 25
    let mut expected: BTreeMap<(u32, u32), BTreeSet<u64>> = BTreeMap::new();
    for k in 0..100u64 {
        let (s, d) = ((k / 50) as u32, (k / 25) as u32);
        if s != d {
            expected.entry((s, d)).or_default().insert(k);
        }
    }
    let mut got: BTreeMap<(u32, u32), BTreeSet<u64>> = BTreeMap::new();
    for t in plan.transfers() {
        got.entry((t.src, t.dst)).or_default().extend(t.fragment.elements(&vps));
    }
    assert_eq!(got, expected);
}

#[test]
fn toggling_zero_is_rejected() {
    let vps = build_vps(ModelSpec::toy_transformer(1, 4, 1)).unwrap();
    let a = ParallelConfig::new(2, 1, 1).with_zero(true);
    let b = ParallelConfig::new(2, 1, 1);
    assert_eq!(
        plan_optimizer(&vps, &a, &b, &WorldMap::identity(2), MIXED),
        Err(reshard_core::Error::ZeroMismatch)
    );
}

#[test]
fn conservation_and_raw_symmetry() {
    let vps = build_vps(ModelSpec::toy_transformer(4, 8, 4)).unwrap();
    let topo = Topology::new(2, 4);
    let pairs = [
        (ParallelConfig::new(2, 2, 2), ParallelConfig::new(4, 2, 1).with_ep(2)),
        (ParallelConfig::new(1, 8, 1), ParallelConfig::new(2, 1, 4).with_ep(2)),
        (ParallelConfig::new(2, 4, 1).with_zero(true), ParallelConfig::new(8, 1, 1).with_ep(4).with_zero(true)),
    ];
    let world = WorldMap::identity(8);
    for (a, b) in pairs {
        let ab = plan_transition(&vps, &a, &b, &world, &topo, TransitionOptions::default()).unwrap();
        let ba = plan_transition(&vps, &b, &a, &world, &topo, TransitionOptions::default()).unwrap();
        for p in ab.routing_plans() {
            assert_eq!(p.bytes_sent(), p.bytes_moved());
        }
        assert!(validate_transition(&ab, &vps, &b).unwrap().is_ok());
        assert!(validate_transition(&ba, &vps, &a).unwrap().is_ok());
        assert_eq!(ab.parameters.raw_traffic_bytes(&vps), ba.parameters.raw_traffic_bytes(&vps));
        assert_eq!(ab.optimizer.raw_traffic_bytes(&vps), ba.optimizer.raw_traffic_bytes(&vps));
    }
}

#[test]
fn planning_is_deterministic() {
    let vps = build_vps(ModelSpec::toy_transformer(4, 8, 4)).unwrap();
    let a = ParallelConfig::new(2, 2, 2).with_zero(true);
    let b = ParallelConfig::new(4, 1, 4).with_ep(4).with_zero(true);
    let world = WorldMap::resize(8, 16);
    let topo = Topology::new(2, 8);
    let p1 = plan_transition(&vps, &a, &b, &world, &topo, TransitionOptions::default()).unwrap();
    let p2 = plan_transition(&vps, &a, &b, &world, &topo, TransitionOptions::default()).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(p1.transfers(&vps), p2.transfers(&vps));
}
