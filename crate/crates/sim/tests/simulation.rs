use std::collections::{BTreeMap, HashMap};

use clperf_core::{
    aggregate_stats, latency_cdf, out_of_sync_ratio, CommitteeLookup, EventKind, GroupBy, Slot, SyncState,
};
use clperf_sim::{
    emergent_reorgs, inject_fault, run, BlockDelay, ConfigError, Fault, FaultKind, GroundTruth, LatencyRule,
    RegionProfile, RunOutput, SimConfig, StreamItem, FOUR_REGIONS,
};

fn two_regions(seed: u64, far_median: f64, far_shift: f64) -> SimConfig {
    let mut cfg = SimConfig::ideal(seed, 4, 128, 96);
    cfg.regions = vec![
        RegionProfile { name: "near".into(), peer_count: 50, processing_ms: 10.0, jitter_ms: 5.0 },
        RegionProfile { name: "far".into(), peer_count: 50, processing_ms: 10.0, jitter_ms: 5.0 },
    ];
    cfg.latencies = vec![
        LatencyRule { from: "*".into(), to: "near".into(), median_ms: 1400.0, sigma: 0.3, shift_ms: 0.0 },
        LatencyRule { from: "*".into(), to: "far".into(), median_ms: far_median, sigma: 0.3, shift_ms: far_shift },
    ];
    for (i, n) in cfg.nodes.iter_mut().enumerate() {
        n.region = if i % 2 == 0 { "near" } else { "far" }.into();
    }
    cfg
}

fn block_offsets(out: &RunOutput, region: &str) -> Vec<u64> {
    let ms = out.truth.spec.ms_per_slot() as i64;
    out.streams
        .iter()
        .filter(|s| s.node.location == region && s.node.node_id != "hub")
        .flat_map(|s| s.events())
        .filter(|e| e.kind == EventKind::Block)
        .map(|e| (e.at_ms - e.slot.0 as i64 * ms) as u64)
        .collect()
}

fn achieved_pct(truth: &GroundTruth, region: &str) -> f64 {
    aggregate_stats(&truth.performances, GroupBy::Location)
        .unwrap()
        .into_iter()
        .find(|r| r.group == region)
        .and_then(|r| r.achieved_pct)
        .unwrap()
}

#[test]
fn ideal_network_is_perfect() {
    let out = run(&SimConfig::ideal(11, 3, 200, 64)).unwrap();
    let t = &out.truth;
    assert!(!t.performances.is_empty());
    for p in &t.performances {
        assert_eq!(p.achieved_reward, p.mer, "validator {}", p.validator);
        assert!(p.flags.source && p.flags.target && p.flags.head);
        assert_eq!(p.proposals_fulfilled, p.proposals_assigned);
    }
    assert!(emergent_reorgs(&out).is_empty());
    assert!(t.sync_states.iter().flatten().all(|s| *s == SyncState::Synced));
    assert_eq!(t.canonical.len(), 96);
    assert_eq!(t.blocks.len(), 96);
}

#[test]
fn same_seed_same_truth() {
    let cfg = two_regions(5, 2500.0, 0.0);
    let a = serde_json::to_string(&run(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = serde_json::to_string(&run(&two_regions(6, 2500.0, 0.0)).unwrap()).unwrap();
    assert_ne!(a, other);
}

#[test]
fn shifted_region_arrives_later_by_the_shift() {
    // observers host no validators, so they never see their own blocks at offset 0
    let mut cfg = two_regions(3, 1400.0, 1060.0);
    let mut hub = cfg.nodes[0].clone();
    hub.id = "hub".into();
    hub.validators = Some(cfg.validators);
    for n in &mut cfg.nodes {
        n.validators = Some(0);
    }
    cfg.nodes.push(hub);
    let out = run(&cfg).unwrap();
    let mean = |v: Vec<u64>| v.iter().sum::<u64>() as f64 / v.len() as f64;
    let diff = mean(block_offsets(&out, "far")) - mean(block_offsets(&out, "near"));
    assert!((diff - 1060.0).abs() <= 106.0, "difference {diff} ms");
}

#[test]
fn preset_medians_match_configuration() {
    let cfg = SimConfig::from_toml(FOUR_REGIONS).unwrap();
    let out = run(&cfg).unwrap();
    for (region, median) in [("helsinki", 1440.0), ("london", 2180.0)] {
        let cdf = latency_cdf(block_offsets(&out, region)).unwrap();
        let got = cdf.median().unwrap() as f64;
        assert!((got - median).abs() <= median * 0.1, "{region}: {got} vs {median}");
    }
}

#[test]
fn forced_late_block_is_one_reorg_per_receiver() {
    let mut cfg = SimConfig::ideal(2, 4, 64, 64);
    cfg.block_delays.push(BlockDelay { slot: 40, extra_ms: 5000 });
    let out = run(&cfg).unwrap();
    let proposer = &out.truth.block(Slot(40)).unwrap().source;
    let reorgs = emergent_reorgs(&out);
    assert_eq!(reorgs.len(), 3);
    for r in &reorgs {
        assert_eq!(r.slot, Slot(40));
        assert_eq!(r.depth, Some(1));
        assert_ne!(&r.node, proposer);
    }
    let reorg_events: usize = out
        .streams
        .iter()
        .map(|s| s.events().filter(|e| e.kind == EventKind::ChainReorg).count())
        .sum();
    assert_eq!(reorg_events, 3);
    // validators on the receiving nodes miss the head of slot 40
    let wrong_heads = out
        .truth
        .attestations
        .iter()
        .filter(|a| a.record.attested_slot == Slot(40) && !a.flags.head)
        .count();
    assert!(wrong_heads > 0);
}

#[test]
fn node_down_counts_as_out_of_sync() {
    let cfg = inject_fault(&SimConfig::ideal(4, 3, 96, 64), Fault::new("node-1", FaultKind::NodeDown, 20, 29)).unwrap();
    let out = run(&cfg).unwrap();
    let t = &out.truth;
    let ratios = out_of_sync_ratio(&t.sync_spans(), t.duration_slots).unwrap();
    assert!(ratios["node-1"] >= 10.0 / 64.0 * 100.0);
    assert_eq!(ratios["node-0"], 0.0);
    assert_eq!(t.fault_slots("node-1").len(), 10);
    // no events while down, and the backlog is imported silently
    let ms = t.spec.ms_per_slot() as i64;
    let down_events = out.streams[1]
        .events()
        .filter(|e| (20 * ms..30 * ms).contains(&e.at_ms))
        .count();
    assert_eq!(down_events, 0);
    let votes_in_window = t
        .attestations
        .iter()
        .filter(|a| a.node == 1 && (20..30).contains(&a.record.attested_slot.0))
        .count();
    assert_eq!(votes_in_window, 0);
    assert!(t.performances.iter().any(|p| p.node.node_id == "node-1" && p.achieved_reward < p.mer));
}

#[test]
fn clock_skew_shifts_timestamps_in_window_only() {
    let base = SimConfig::ideal(4, 2, 64, 64);
    let cfg = inject_fault(&base, Fault::new("node-0", FaultKind::ClockSkew, 10, 12).with_skew(-200)).unwrap();
    let plain = run(&base).unwrap();
    let skewed = run(&cfg).unwrap();
    let pairs: Vec<_> = plain.streams[0].events().zip(skewed.streams[0].events()).collect();
    assert!(!pairs.is_empty());
    for (p, s) in pairs {
        let expected = if (10..=12).contains(&p.slot.0) { p.at_ms - 200 } else { p.at_ms };
        assert_eq!(s.at_ms, expected);
    }
}

#[test]
fn stream_drop_leaves_a_gap() {
    let base = SimConfig::ideal(4, 2, 64, 64);
    let cfg = inject_fault(&base, Fault::new("node-1", FaultKind::StreamDrop, 20, 23)).unwrap();
    let out = run(&cfg).unwrap();
    let stats = &out.truth.stream_stats[1];
    assert_eq!(stats.blocks_dropped, 4);
    assert_eq!(stats.dropped, 8);
    let items = &out.streams[1].items;
    let gap = items.iter().position(|i| matches!(i, StreamItem::Gap { .. })).unwrap();
    assert_eq!(items.iter().filter(|i| matches!(i, StreamItem::Gap { .. })).count(), 1);
    let StreamItem::Event(before) = &items[gap - 1] else { panic!() };
    let StreamItem::Event(after) = &items[gap + 1] else { panic!() };
    assert_eq!(before.slot, Slot(19));
    assert_eq!(after.slot, Slot(24));
    assert_eq!(out.streams[1].events().count() as u64, stats.emitted - stats.dropped);
}

#[test]
fn invalid_region_reference_is_rejected() {
    let mut cfg = SimConfig::ideal(1, 2, 10, 32);
    cfg.nodes[0].region = "mars".into();
    assert!(matches!(run(&cfg), Err(ConfigError::UnknownRegion { .. })));
}

#[test]
fn conservation_and_causality() {
    let out = run(&two_regions(9, 2600.0, 0.0)).unwrap();
    let t = &out.truth;
    for m in &t.messages {
        assert!(m.receive_ms >= m.send_ms);
        if let Some(p) = m.processed_ms {
            assert!(p >= m.receive_ms);
        }
    }
    // every canonical bit belongs to a produced vote and appears in exactly one block
    let produced: HashMap<(u64, u64, u32), Option<Slot>> = t
        .attestations
        .iter()
        .map(|a| ((a.record.attested_slot.0, a.committee_index, a.committee_position), a.record.inclusion_slot))
        .collect();
    assert_eq!(produced.len(), t.attestations.len());
    let mut seen: BTreeMap<(u64, u64, u32), Slot> = BTreeMap::new();
    for b in &t.blocks {
        for agg in &b.aggregates {
            let committee = t.committee(agg.attested_slot, agg.committee_index).unwrap();
            assert_eq!(agg.bits.len(), committee.len());
            for pos in agg.bits.ones() {
                let key = (agg.attested_slot.0, agg.committee_index, pos as u32);
                assert!(seen.insert(key, b.slot).is_none(), "double inclusion of {key:?}");
                assert_eq!(produced.get(&key), Some(&Some(b.slot)));
            }
        }
    }
    let included = produced.values().filter(|v| v.is_some()).count();
    assert_eq!(included, seen.len());
    assert!(t.attestations.iter().all(|a| a.flags.is_consistent()));
}

#[test]
fn more_latency_never_helps() {
    let mut worse = 0;
    for seed in 0..20 {
        let a = run(&two_regions(seed, 2000.0, 0.0)).unwrap();
        let b = run(&two_regions(seed, 3000.0, 0.0)).unwrap();
        if achieved_pct(&b.truth, "far") > achieved_pct(&a.truth, "far") {
            worse += 1;
        }
    }
    assert!(worse <= 1, "{worse} of 20 seeds improved with more latency");
}
