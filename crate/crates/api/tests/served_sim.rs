//! The client against simulated nodes served over loopback HTTP.

use std::sync::Arc;
use std::time::{Duration, Instant};

use clperf_api::schema::{BlockSummaryDoc, Envelope, SyncingDoc, VersionedEnvelope};
use clperf_api::{
    receipt_now_ms, subscribe_events, BeaconClient, Multiplexer, NodeEndpoint, Production, SimClock, SimNetwork,
    StreamMessage, Unavailability,
};
use clperf_core::{record_arrival, ChainSpec, EventKind, NodeLabel, ObservedEvent, Slot};
use clperf_sim::{
    inject_fault, run, CandidateResult, Fault, FaultKind, LatencyRule, RegionProfile, RunOutput, SimConfig,
};
use tokio::sync::mpsc;

const WALL_MS_PER_SLOT: u64 = 240;

fn small(seed: u64, nodes: usize) -> SimConfig {
    let mut cfg = SimConfig::ideal(seed, nodes, 64, 16);
    cfg.spec = ChainSpec {
        slots_per_epoch: 8,
        ..ChainSpec::default()
    };
    cfg.latencies = vec![LatencyRule {
        from: "*".into(),
        to: "*".into(),
        median_ms: 900.0,
        sigma: 0.2,
        shift_ms: 0.0,
    }];
    cfg
}

async fn serve(out: &RunOutput, lead_ms: u64) -> SimNetwork {
    let clock = SimClock::starting_in(lead_ms, WALL_MS_PER_SLOT, out.truth.spec.ms_per_slot());
    SimNetwork::start(Arc::new(out.clone()), clock).await.unwrap()
}

fn protocol_ms(net: &SimNetwork, slot: u64, offset_ms: u64) -> Instant {
    let wall = net.clock.wall_at((slot * 12_000 + offset_ms) as i64);
    Instant::now() + Duration::from_millis((wall - receipt_now_ms()).max(0) as u64)
}

async fn collect_until(rx: &mut mpsc::UnboundedReceiver<StreamMessage>, net: &SimNetwork, slot: u64) -> Vec<StreamMessage> {
    let until = protocol_ms(net, slot, 0);
    let mut out = Vec::new();
    while let Ok(Some(m)) = tokio::time::timeout_at(until.into(), rx.recv()).await {
        out.push(m);
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn event_stream_round_trip() {
    let out = run(&small(3, 3)).unwrap();
    let net = serve(&out, 300).await;
    let (tx, mut rx) = mpsc::unbounded_channel();
    let ep = net.endpoints()[1].clone();
    let kinds = [EventKind::Block, EventKind::Head, EventKind::ChainReorg];
    tokio::spawn(async move { subscribe_events(ep, &kinds, tx).await });
    let got = collect_until(&mut rx, &net, 17).await;

    let events: Vec<_> = got
        .iter()
        .map(|m| match m {
            StreamMessage::Event(e) => e,
            other => panic!("unexpected {other:?}"),
        })
        .filter(|e| e.slot.0 < 16)
        .collect();
    let expected: Vec<_> = out.streams[1].events().filter(|e| e.slot.0 < 16).collect();
    assert_eq!(
        events.iter().map(|e| (e.kind, e.slot, e.root)).collect::<Vec<_>>(),
        expected.iter().map(|e| (e.kind, e.slot, e.root)).collect::<Vec<_>>()
    );
    assert!(events.windows(2).all(|w| w[0].receipt_ms <= w[1].receipt_ms));

    // receipt offsets track the simulated ones, up to scheduling noise scaled by 50x
    let clock = net.clock.slot_clock();
    let close = events
        .iter()
        .zip(&expected)
        .filter(|(e, x)| {
            let obs = ObservedEvent {
                node: e.node.clone(),
                kind: e.kind,
                slot: e.slot,
                receipt_ms: e.receipt_ms,
            };
            let got = record_arrival(&obs, &clock).unwrap().arrival_offset_ms as i64;
            (got - (x.at_ms - x.slot.0 as i64 * 12_000)).abs() <= 600
        })
        .count();
    assert!(close * 10 >= events.len() * 9, "{close} of {} offsets close", events.len());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn served_documents_match_schemas_and_truth() {
    let out = run(&small(4, 2)).unwrap();
    let net = serve(&out, 100).await;
    let base = &net.endpoints()[0].base_url;
    let http = reqwest::Client::new();

    let slot = 3u64;
    let text = http
        .get(format!("{base}/eth/v2/validator/blocks/{slot}?summary=true"))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    let doc: VersionedEnvelope<BlockSummaryDoc> = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string(&doc).unwrap(), text);
    let truth = out
        .truth
        .candidates
        .iter()
        .find(|c| c.slot == Slot(slot) && c.node == 0)
        .unwrap();
    let CandidateResult::Block(expected) = &truth.result else { panic!() };
    let label = NodeLabel::new("elsewhere", "x", "y");
    let mut expected = expected.clone();
    expected.source = label.clone();
    assert_eq!(doc.data.into_summary(label), expected);

    let sync: Envelope<SyncingDoc> = http
        .get(format!("{base}/eth/v1/node/syncing"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(!sync.data.is_syncing);

    let client = BeaconClient::new(net.endpoints()[0].clone()).unwrap();
    let (spec, clock) = client.chain_clock().await.unwrap();
    assert_eq!(spec.slots_per_epoch, 8);
    assert_eq!(clock.ms_per_slot, WALL_MS_PER_SLOT);
    assert_eq!(clock.genesis_ms, net.clock.genesis_wall_ms);
    let committees = client.get_committees(1).await.unwrap();
    let total: usize = committees.iter().map(|c| c.validators.len()).sum();
    assert_eq!(total, 64);

    // wait until slot 5 so that block 3 is visible everywhere
    tokio::time::sleep_until(protocol_ms(&net, 5, 0).into()).await;
    let canonical = client.get_block(Slot(3)).await.unwrap().unwrap();
    assert_eq!(canonical.root, out.truth.block(Slot(3)).unwrap().root);
    let status = client.get_sync_status().await.unwrap();
    assert!(!status.is_syncing);
    assert!(status.head_slot >= Slot(4));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn stream_drop_yields_gap_then_resumes() {
    let cfg = inject_fault(&small(5, 2), Fault::new("node-1", FaultKind::StreamDrop, 6, 8)).unwrap();
    let out = run(&cfg).unwrap();
    let net = serve(&out, 300).await;
    let (tx, mut rx) = mpsc::unbounded_channel();
    let mut ep = net.endpoints()[1].clone();
    ep.backoff.base_ms = 40;
    ep.max_retries = 20;
    tokio::spawn(async move { subscribe_events(ep, &[EventKind::Block], tx).await });
    let got = collect_until(&mut rx, &net, 17).await;

    let gaps = got.iter().filter(|m| matches!(m, StreamMessage::Gap { .. })).count();
    assert_eq!(gaps, 1);
    let slots: Vec<u64> = got
        .iter()
        .filter_map(|m| match m {
            StreamMessage::Event(e) => Some(e.slot.0),
            _ => None,
        })
        .collect();
    assert!(slots.iter().all(|s| !(6..=8).contains(s)), "{slots:?}");
    // run continues one epoch past the measured duration; compare the slots collected
    let stats = &out.truth.stream_stats[1];
    assert_eq!(stats.blocks_dropped, 3);
    let served = out.streams[1].events().filter(|e| e.kind == EventKind::Block && e.slot.0 < 17).count();
    assert_eq!(slots.iter().filter(|s| **s < 17).count(), served);
    assert_eq!(served, 17 - 3);
    let gap_at = got.iter().position(|m| matches!(m, StreamMessage::Gap { .. })).unwrap();
    let StreamMessage::Event(after) = &got[gap_at + 1] else { panic!() };
    assert_eq!(after.slot, Slot(9));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn unavailable_candidates() {
    let mut cfg = small(6, 3);
    cfg.regions.push(RegionProfile {
        name: "slow".into(),
        peer_count: 50,
        processing_ms: 0.0,
        jitter_ms: 0.0,
    });
    cfg.latencies.push(LatencyRule {
        from: "*".into(),
        to: "slow".into(),
        median_ms: 40_000.0,
        sigma: 0.0,
        shift_ms: 0.0,
    });
    cfg.nodes[1].region = "slow".into();
    cfg.nodes[2].api_delay_ms = 5000;
    let cfg = inject_fault(&cfg, Fault::new("node-0", FaultKind::NodeDown, 8, 11)).unwrap();
    let out = run(&cfg).unwrap();
    let lagging = out
        .truth
        .candidates
        .iter()
        .find(|c| c.node == 1 && matches!(c.result, CandidateResult::Unavailable(_)))
        .map(|c| c.slot)
        .expect("slow node falls out of sync");
    assert!(lagging.0 < 8);

    let net = serve(&out, 100).await;
    let mut eps = net.endpoints();
    eps[0].timeout_ms = 300;
    let mux = Multiplexer::new(eps).unwrap();

    // requests go out at slot start, as a collector would issue them
    tokio::time::sleep_until(protocol_ms(&net, lagging.0, 0).into()).await;
    let deadline = protocol_ms(&net, lagging.0, 4000);
    let answers = mux.fan_out(lagging, deadline).await;
    assert!(matches!(answers[0].1, Production::Block(_)), "{:?}", answers[0].1);
    assert_eq!(answers[1].1, Production::Unavailable(Unavailability::OutOfSync));
    assert_eq!(answers[2].1, Production::Unavailable(Unavailability::Timeout));
    if let Production::Block(b) = &answers[0].1 {
        assert_eq!(b.source.node_id, "node-0");
    }

    // node-0 is down during slots 8..=11: requests hang past the deadline
    tokio::time::sleep_until(protocol_ms(&net, 9, 0).into()).await;
    let deadline = protocol_ms(&net, 9, 4000);
    let answer = mux.request(0, Slot(9), deadline).await;
    assert_eq!(answer, Production::Unavailable(Unavailability::Timeout));
    let client = mux.clients()[0].clone();
    tokio::time::sleep_until(protocol_ms(&net, 10, 0).into()).await;
    assert!(client.get_sync_status().await.is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn duplicate_requests_coalesce() {
    let out = run(&small(7, 2)).unwrap();
    let net = serve(&out, 100).await;
    let mux = Multiplexer::new(net.endpoints()).unwrap();
    let deadline = protocol_ms(&net, 2, 4000);
    let (a, b) = tokio::join!(mux.request(1, Slot(2), deadline), mux.request(1, Slot(2), deadline));
    assert_eq!(a, b);
    assert!(matches!(a, Production::Block(_)));
    assert_eq!(net.nodes[1].production_requests(), 1);
    assert_eq!(net.nodes[0].production_requests(), 0);
}

#[tokio::test]
async fn unreachable_endpoint_reports_down() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut ep = NodeEndpoint::new(format!("http://{addr}"), NodeLabel::new("gone", "nowhere", "none"));
    ep.backoff.base_ms = 5;
    ep.max_retries = 3;
    let (tx, mut rx) = mpsc::unbounded_channel();
    subscribe_events(ep, &[EventKind::Block], tx).await;
    let msgs: Vec<_> = std::iter::from_fn(|| rx.try_recv().ok()).collect();
    assert_eq!(msgs.len(), 1);
    assert!(matches!(&msgs[0], StreamMessage::Down { node, .. } if node.node_id == "gone"));
}
