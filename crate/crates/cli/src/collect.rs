//! Live collection from beacon node endpoints.
//!
//! Every node's event stream is followed for the whole window. At each slot start all
//! nodes are asked for a block and for their sync status. Once the window has passed,
//! canonical blocks and committees are fetched and the candidates scored. Live nodes do
//! not expose per-validator rewards, so no epoch performances are produced.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use clperf_api::{
    receipt_now_ms, subscribe_events, CommitteeSet, Multiplexer, NodeEndpoint, Production, StreamMessage,
    Unavailability,
};
use clperf_core::telemetry::spans_from_states;
use clperf_core::{
    compare_candidates, record_arrival, BlockSummary, CandidateRanking, ChainSpec, EventKind, InclusionIndex,
    ObservedEvent, ReorgEvent, Reward, RewardWeights, ScoreParams, Slot, SlotClock, SyncState,
};
use futures::future::join_all;
use tokio::sync::mpsc;

use crate::ingest::{EndpointReport, IngestSummary};
use crate::record::{BlockScoreRecord, CandidateStatus, Payload};
use crate::CliError;

/// Head lag beyond which a node counts as out of sync.
const MAX_HEAD_LAG: u64 = 2;
/// Protocol ms after slot start by which a block must be produced.
const PRODUCTION_DEADLINE_MS: u64 = 4000;

fn wall_ms(clock: &SlotClock, slot: Slot, protocol_offset_ms: u64) -> i64 {
    clock.slot_start_ms(slot) + (protocol_offset_ms * clock.ms_per_slot / clock.protocol_ms_per_slot) as i64
}

fn instant_at(clock: &SlotClock, slot: Slot, protocol_offset_ms: u64) -> Instant {
    let ahead = (wall_ms(clock, slot, protocol_offset_ms) - receipt_now_ms()).max(0);
    Instant::now() + Duration::from_millis(ahead as u64)
}

fn status_of(u: &Unavailability) -> CandidateStatus {
    match u {
        Unavailability::OutOfSync => CandidateStatus::OutOfSync,
        Unavailability::Timeout => CandidateStatus::Timeout,
        Unavailability::ProtocolError(_) => CandidateStatus::ProtocolError,
        Unavailability::EndpointDown(_) => CandidateStatus::EndpointDown,
    }
}

/// Per-node failures, summarised as one line each.
#[derive(Default)]
struct Problems(BTreeMap<String, Vec<String>>);

impl Problems {
    fn add(&mut self, node: &str, what: String) {
        self.0.entry(node.to_string()).or_default().push(what);
    }

    fn report(self) -> Vec<EndpointReport> {
        self.0
            .into_iter()
            .map(|(node, list)| EndpointReport {
                problem: match list.len() {
                    1 => list[0].clone(),
                    n => format!("{n} problems, first: {}", list[0]),
                },
                node,
            })
            .collect()
    }
}

struct Window {
    spec: ChainSpec,
    clock: SlotClock,
    first: Slot,
    /// Per node, one state per collected slot.
    states: Vec<Vec<SyncState>>,
    /// Per collected slot, each node's answer in endpoint order.
    answers: Vec<(Slot, Vec<Production>)>,
    messages: Vec<StreamMessage>,
}

impl Window {
    fn contains(&self, slot: Slot) -> bool {
        slot >= self.first && slot.0 < self.first.0 + self.answers.len() as u64
    }
}

/// Collect `duration_slots` full slots, starting at the next slot boundary. Ctrl-C ends
/// the window early.
pub async fn collect(
    endpoints: Vec<NodeEndpoint>,
    duration_slots: u64,
) -> Result<(Vec<Payload>, IngestSummary), CliError> {
    if endpoints.is_empty() {
        return Err(CliError::Config("no endpoints given".into()));
    }
    if duration_slots == 0 {
        return Err(CliError::Config("duration must be at least one slot".into()));
    }
    let mux = Multiplexer::new(endpoints.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let mut problems = Problems::default();
    let window = observe(&mux, &endpoints, duration_slots, &mut problems).await?;
    let payloads = score_and_assemble(&mux, &endpoints, window, &mut problems).await;
    let mut summary = IngestSummary::new();
    for p in &payloads.0 {
        summary.count(p);
    }
    summary.rejected = payloads.1;
    summary.endpoints = problems.report();
    Ok((payloads.0, summary))
}

async fn observe(
    mux: &Multiplexer,
    endpoints: &[NodeEndpoint],
    duration_slots: u64,
    problems: &mut Problems,
) -> Result<Window, CliError> {
    let mut chain = None;
    for c in mux.clients() {
        match c.chain_clock().await {
            Ok(found) => {
                chain = Some(found);
                break;
            }
            Err(e) => problems.add(&c.label().node_id, format!("clock: {e}")),
        }
    }
    let (spec, clock) = chain.ok_or_else(|| CliError::Data("no endpoint answered genesis and spec requests".into()))?;
    let first = Slot(clock.slot_at(receipt_now_ms()).map_or(0, |s| s.0 + 1));

    let (tx, mut rx) = mpsc::unbounded_channel();
    const KINDS: [EventKind; 3] = [EventKind::Block, EventKind::Head, EventKind::ChainReorg];
    let subscriptions: Vec<_> = endpoints
        .iter()
        .map(|ep| tokio::spawn(subscribe_events(ep.clone(), &KINDS, tx.clone())))
        .collect();
    drop(tx);

    let mut window = Window {
        spec,
        clock,
        first,
        states: vec![Vec::new(); endpoints.len()],
        answers: Vec::new(),
        messages: Vec::new(),
    };
    let ctrl_c = tokio::signal::ctrl_c();
    tokio::pin!(ctrl_c);
    for s in first.0..first.0 + duration_slots {
        let slot = Slot(s);
        tokio::select! {
            _ = tokio::time::sleep_until(instant_at(&window.clock, slot, 0).into()) => {}
            _ = &mut ctrl_c => break,
        }
        let deadline = instant_at(&window.clock, slot, PRODUCTION_DEADLINE_MS);
        let (answers, statuses) = tokio::join!(
            mux.fan_out(slot, deadline),
            join_all(mux.clients().iter().map(|c| tokio::time::timeout_at(deadline.into(), c.get_sync_status())))
        );
        let max_head = statuses.iter().filter_map(|s| s.as_ref().ok()?.as_ref().ok()).map(|s| s.head_slot).max();
        for (i, status) in statuses.iter().enumerate() {
            let synced = match status {
                Err(_) => {
                    problems.add(&endpoints[i].label.node_id, format!("slot {s}: no sync status by the deadline"));
                    false
                }
                Ok(Ok(st)) => !st.is_syncing && max_head.is_none_or(|m| m.0 <= st.head_slot.0 + MAX_HEAD_LAG),
                Ok(Err(e)) => {
                    problems.add(&endpoints[i].label.node_id, format!("slot {s}: {e}"));
                    false
                }
            };
            let produced = matches!(answers[i].1, Production::Block(_));
            window.states[i].push(if synced && produced { SyncState::Synced } else { SyncState::OutOfSync });
        }
        window.answers.push((slot, answers.into_iter().map(|(_, p)| p).collect()));
    }

    // the last blocks need time to reach every node before the canonical chain is read
    let end = Slot(first.0 + window.answers.len() as u64 + 1);
    tokio::time::sleep_until(instant_at(&window.clock, end, 0).into()).await;
    for task in &subscriptions {
        task.abort();
    }
    while let Some(m) = rx.recv().await {
        window.messages.push(m);
    }
    Ok(window)
}

/// Canonical block at `slot` from the first node in `order` that answers.
async fn canonical_block(mux: &Multiplexer, order: &[usize], slot: Slot) -> Result<Option<BlockSummary>, String> {
    let mut last_error = String::from("no endpoints");
    for c in order.iter().map(|&i| &mux.clients()[i]) {
        match c.get_block(slot).await {
            Ok(b) => return Ok(b),
            Err(e) => last_error = format!("{}: {e}", c.label().node_id),
        }
    }
    Err(last_error)
}

async fn committees_for(
    mux: &Multiplexer,
    order: &[usize],
    epochs: BTreeSet<u64>,
    problems: &mut Problems,
) -> CommitteeSet {
    let mut set = CommitteeSet::default();
    for epoch in epochs {
        let mut found = false;
        for c in order.iter().map(|&i| &mux.clients()[i]) {
            if let Ok(docs) = c.get_committees(epoch).await {
                set.extend(docs);
                found = true;
                break;
            }
        }
        if !found {
            problems.add("*", format!("no committees for epoch {epoch}"));
        }
    }
    set
}

async fn score_and_assemble(
    mux: &Multiplexer,
    endpoints: &[NodeEndpoint],
    window: Window,
    problems: &mut Problems,
) -> (Vec<Payload>, u64) {
    let spe = window.spec.slots_per_epoch;
    let mut out = Vec::new();
    let mut rejected = 0;

    let mut reorgs = Vec::new();
    for m in &window.messages {
        match m {
            StreamMessage::Event(e) if window.contains(e.slot) => {
                if e.kind == EventKind::ChainReorg {
                    reorgs.push(Payload::Reorg(ReorgEvent {
                        node: e.node.clone(),
                        slot: e.slot,
                        depth: e.depth,
                    }));
                }
                let observed = ObservedEvent {
                    node: e.node.clone(),
                    kind: e.kind,
                    slot: e.slot,
                    receipt_ms: e.receipt_ms,
                };
                match record_arrival(&observed, &window.clock) {
                    Ok(a) => out.push(Payload::Arrival(a)),
                    Err(_) => rejected += 1,
                }
            }
            StreamMessage::Event(_) => {}
            StreamMessage::Gap { node, at_ms } => {
                let slot = window.clock.slot_at(*at_ms).map_or(0, |s| s.0);
                problems.add(&node.node_id, format!("event stream gap in slot {slot}"));
            }
            StreamMessage::Down { node, reason, .. } => problems.add(&node.node_id, format!("event stream down: {reason}")),
            StreamMessage::Malformed { node, detail, .. } => problems.add(&node.node_id, format!("malformed event: {detail}")),
        }
    }

    // ask the nodes that were in sync most often first
    let mut order: Vec<usize> = (0..endpoints.len()).collect();
    order.sort_by_key(|&i| window.states[i].iter().filter(|s| **s == SyncState::OutOfSync).count());

    // blocks from one epoch back seed the index with votes included before the window
    let seed_from = window.first.0.saturating_sub(spe);
    let end = window.first.0 + window.answers.len() as u64;
    let mut canonical = Vec::new();
    for s in seed_from..end {
        match canonical_block(mux, &order, Slot(s)).await {
            Ok(Some(b)) => canonical.push(b),
            Ok(None) => {}
            Err(e) => problems.add("*", format!("canonical block {s}: {e}")),
        }
    }
    let candidate_blocks = window.answers.iter().flat_map(|(_, a)| a).filter_map(|p| match p {
        Production::Block(b) => Some(b),
        Production::Unavailable(_) => None,
    });
    let epochs: BTreeSet<u64> = canonical
        .iter()
        .chain(candidate_blocks)
        .flat_map(|b| b.aggregates.iter().map(|a| a.attested_slot.0 / spe))
        .collect();
    let committees = committees_for(mux, &order, epochs, problems).await;

    let params = ScoreParams::new(&window.spec, RewardWeights::default());
    let mut index = InclusionIndex::new();
    let mut chain = canonical.iter().peekable();
    for (slot, answers) in &window.answers {
        while let Some(b) = chain.next_if(|b| b.slot < *slot) {
            if let Err(e) = index.apply(b, &committees, &params) {
                problems.add("*", format!("canonical block {}: {e}", b.slot.0));
            }
        }
        let blocks: Vec<BlockSummary> = answers
            .iter()
            .filter_map(|p| match p {
                Production::Block(b) => Some(b.clone()),
                Production::Unavailable(_) => None,
            })
            .collect();
        match compare_candidates::<Reward>(*slot, &blocks, &index, &committees, &params) {
            Ok(CandidateRanking::Ranked(ranked)) => out.extend(ranked.into_iter().map(|r| {
                Payload::BlockScore(BlockScoreRecord {
                    slot: *slot,
                    node: r.source,
                    status: CandidateStatus::Block,
                    rank: Some(r.rank),
                    score: Some(r.score),
                    relative: r.relative,
                })
            })),
            Ok(CandidateRanking::NoCandidates) => {}
            Err(e) => {
                problems.add("*", format!("scoring slot {}: {e}", slot.0));
                out.extend(blocks.into_iter().map(|b| {
                    Payload::BlockScore(BlockScoreRecord {
                        slot: *slot,
                        node: b.source,
                        status: CandidateStatus::ProtocolError,
                        rank: None,
                        score: None,
                        relative: None,
                    })
                }));
            }
        }
        for (i, p) in answers.iter().enumerate() {
            if let Production::Unavailable(u) = p {
                out.push(Payload::BlockScore(BlockScoreRecord {
                    slot: *slot,
                    node: endpoints[i].label.clone(),
                    status: status_of(u),
                    rank: None,
                    score: None,
                    relative: None,
                }));
            }
        }
    }

    out.extend(reorgs);
    for (ep, states) in endpoints.iter().zip(&window.states) {
        out.extend(spans_from_states(&ep.label, window.first, states).into_iter().map(Payload::SyncSpan));
    }
    (out, rejected)
}
