//! Serves a finished simulation run through the beacon API subset, one listener per
//! simulated node, replaying each node's events in (optionally scaled) wall time.
//!
//! Faults map onto transport behaviour: while a node is down every request hangs until
//! the window ends; while its stream is dropped the event connection is closed at the
//! first lost event and reconnects are refused with 503 until the window ends.

use std::collections::{HashMap, HashSet};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use clperf_core::{EventKind, NodeLabel, Slot, SlotClock};
use clperf_sim::{CandidateResult, FaultKind, NodeEvent, RunOutput, StreamItem, Unavailable};
use futures::Stream;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::client::{receipt_now_ms, NodeEndpoint};
use crate::schema::{
    spec_doc, BlockEventDoc, BlockSummaryDoc, CommitteeDoc, Envelope, ErrorBody, GenesisDoc, HeadEventDoc,
    ReorgEventDoc, SyncingDoc, VersionedEnvelope,
};

/// Maps protocol time of the run onto wall time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimClock {
    pub genesis_wall_ms: i64,
    pub wall_ms_per_slot: u64,
    pub protocol_ms_per_slot: u64,
}

impl SimClock {
    /// Genesis `delay_ms` from now.
    pub fn starting_in(delay_ms: u64, wall_ms_per_slot: u64, protocol_ms_per_slot: u64) -> Self {
        Self {
            genesis_wall_ms: receipt_now_ms() + delay_ms as i64,
            wall_ms_per_slot,
            protocol_ms_per_slot,
        }
    }

    pub fn protocol_at(&self, wall_ms: i64) -> i64 {
        ((wall_ms - self.genesis_wall_ms) as i128 * self.protocol_ms_per_slot as i128)
            .div_euclid(self.wall_ms_per_slot as i128) as i64
    }

    pub fn protocol_now(&self) -> i64 {
        self.protocol_at(receipt_now_ms())
    }

    /// Earliest wall time whose protocol time is at least `protocol_ms`.
    pub fn wall_at(&self, protocol_ms: i64) -> i64 {
        let num = protocol_ms as i128 * self.wall_ms_per_slot as i128;
        let den = self.protocol_ms_per_slot as i128;
        self.genesis_wall_ms + (num + den - 1).div_euclid(den) as i64
    }

    pub fn slot_clock(&self) -> SlotClock {
        SlotClock {
            genesis_ms: self.genesis_wall_ms,
            ms_per_slot: self.wall_ms_per_slot,
            protocol_ms_per_slot: self.protocol_ms_per_slot,
            tolerance_ms: SlotClock::DEFAULT_TOLERANCE_MS,
        }
    }

    async fn sleep_until(&self, protocol_ms: i64) {
        let wait = self.wall_at(protocol_ms) - receipt_now_ms();
        if wait > 0 {
            tokio::time::sleep(Duration::from_millis(wait as u64)).await;
        }
    }
}

struct NodeState {
    run: Arc<RunOutput>,
    node: usize,
    clock: SimClock,
    down: Vec<(i64, i64)>,
    dropped: Vec<(i64, i64)>,
    candidates: HashMap<u64, usize>,
    production_requests: Arc<AtomicU64>,
}

type Shared = Arc<NodeState>;

impl NodeState {
    fn ms_per_slot(&self) -> u64 {
        self.run.truth.spec.ms_per_slot()
    }

    async fn wait_while_down(&self) {
        loop {
            let now = self.clock.protocol_now();
            match self.down.iter().find(|(a, b)| (*a..*b).contains(&now)) {
                Some(&(_, end)) => self.clock.sleep_until(end).await,
                None => return,
            }
        }
    }

    fn stream_dropped(&self, now: i64) -> bool {
        self.dropped.iter().any(|(a, b)| (*a..*b).contains(&now))
    }

    fn event_frame(&self, idx: usize, e: &NodeEvent) -> Event {
        let spe = self.run.truth.spec.slots_per_epoch;
        let data = match e.kind {
            EventKind::Block => serde_json::to_string(&BlockEventDoc {
                slot: e.slot.0,
                block: e.root,
                execution_optimistic: false,
            }),
            EventKind::Head => serde_json::to_string(&HeadEventDoc {
                slot: e.slot.0,
                block: e.root,
                epoch_transition: e.slot.0 % spe == 0,
                execution_optimistic: false,
            }),
            EventKind::ChainReorg => serde_json::to_string(&ReorgEventDoc {
                slot: e.slot.0,
                depth: e.depth,
                old_head_block: self.run.truth.block(e.slot).map(|b| b.parent_root).unwrap_or_default(),
                new_head_block: e.root,
                epoch: e.slot.0 / spe,
                execution_optimistic: false,
            }),
        }
        .expect("event documents serialize");
        Event::default().event(e.kind.topic()).id(idx.to_string()).data(data)
    }
}

fn error(code: StatusCode, message: impl Into<String>) -> Response {
    (
        code,
        Json(ErrorBody {
            code: code.as_u16(),
            message: message.into(),
        }),
    )
        .into_response()
}

#[derive(Deserialize)]
struct TopicsQuery {
    topics: Option<String>,
}

async fn events(State(st): State<Shared>, Query(q): Query<TopicsQuery>, headers: HeaderMap) -> Response {
    st.wait_while_down().await;
    let now = st.clock.protocol_now();
    if st.stream_dropped(now) {
        return error(StatusCode::SERVICE_UNAVAILABLE, "event stream unavailable");
    }
    let mut topics = HashSet::new();
    for t in q.topics.as_deref().unwrap_or("").split(',').filter(|t| !t.is_empty()) {
        match EventKind::from_topic(t) {
            Some(k) => {
                topics.insert(k);
            }
            None => return error(StatusCode::BAD_REQUEST, format!("unknown topic `{t}`")),
        }
    }
    if topics.is_empty() {
        return error(StatusCode::BAD_REQUEST, "no topics requested");
    }
    let items = &st.run.streams[st.node].items;
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok());
    let start = match resume {
        Some(id) => id + 1,
        None => items
            .iter()
            .position(|i| match i {
                StreamItem::Event(e) => e.at_ms >= now,
                StreamItem::Gap { at_ms } => *at_ms as i64 >= now,
            })
            .unwrap_or(items.len()),
    };
    Sse::new(event_stream(st, topics, start)).into_response()
}

fn event_stream(st: Shared, topics: HashSet<EventKind>, start: usize) -> impl Stream<Item = Result<Event, Infallible>> {
    futures::stream::unfold((st, start, false), move |(st, mut idx, sent)| {
        let topics = topics.clone();
        async move {
            loop {
                let Some(item) = st.run.streams[st.node].items.get(idx) else {
                    // run exhausted: keep the connection open and silent
                    std::future::pending::<()>().await;
                    return None;
                };
                match item {
                    StreamItem::Gap { at_ms } => {
                        let at = *at_ms as i64;
                        // a resumed connection starts past the gap it was closed at
                        if !sent && at < st.clock.protocol_now() {
                            idx += 1;
                            continue;
                        }
                        st.clock.sleep_until(at).await;
                        return None;
                    }
                    StreamItem::Event(e) => {
                        idx += 1;
                        if !topics.contains(&e.kind) {
                            continue;
                        }
                        st.clock.sleep_until(e.at_ms).await;
                        let frame = st.event_frame(idx - 1, e);
                        return Some((Ok(frame), (st, idx, true)));
                    }
                }
            }
        }
    })
}

async fn syncing(State(st): State<Shared>) -> Response {
    st.wait_while_down().await;
    let now = st.clock.protocol_now().max(0) as u64;
    let current = now / st.ms_per_slot();
    let head = st.run.truth.local_views[st.node].head_slot_at_time(now).map_or(0, |s| s.0);
    let distance = current.saturating_sub(head);
    let states = &st.run.truth.sync_states[st.node];
    let is_syncing = match states.get(current as usize) {
        Some(s) => *s == clperf_core::SyncState::OutOfSync,
        None => distance > 2,
    };
    Json(Envelope {
        data: SyncingDoc {
            head_slot: head,
            sync_distance: distance,
            is_syncing,
            is_optimistic: false,
            el_offline: false,
        },
    })
    .into_response()
}

#[derive(Deserialize)]
struct SummaryQuery {
    summary: Option<bool>,
}

async fn produce_block(State(st): State<Shared>, Path(slot): Path<u64>, Query(q): Query<SummaryQuery>) -> Response {
    st.production_requests.fetch_add(1, Ordering::SeqCst);
    if q.summary != Some(true) {
        return error(StatusCode::BAD_REQUEST, "only summary=true responses are served");
    }
    st.wait_while_down().await;
    let Some(&i) = st.candidates.get(&slot) else {
        return error(StatusCode::BAD_REQUEST, format!("slot {slot} outside the simulated run"));
    };
    let outcome = &st.run.truth.candidates[i];
    match &outcome.result {
        CandidateResult::Unavailable(Unavailable::OutOfSync) => {
            error(StatusCode::SERVICE_UNAVAILABLE, "beacon node is currently syncing")
        }
        CandidateResult::Unavailable(Unavailable::Down) => {
            // down windows already hung above; this is the tail of one
            error(StatusCode::SERVICE_UNAVAILABLE, "beacon node is starting up")
        }
        CandidateResult::Block(b) => {
            let ready = (slot * st.ms_per_slot() + outcome.response_ms) as i64;
            st.clock.sleep_until(ready).await;
            Json(VersionedEnvelope {
                version: "sim".into(),
                data: BlockSummaryDoc::from(b),
            })
            .into_response()
        }
    }
}

async fn canonical_block(State(st): State<Shared>, Path(slot): Path<u64>, Query(q): Query<SummaryQuery>) -> Response {
    if q.summary != Some(true) {
        return error(StatusCode::BAD_REQUEST, "only summary=true responses are served");
    }
    st.wait_while_down().await;
    let now = st.clock.protocol_now();
    let visible = st.run.truth.local_views[st.node]
        .block(Slot(slot))
        .and_then(|b| b.visible_ms)
        .is_some_and(|v| v as i64 <= now);
    match st.run.truth.block(Slot(slot)) {
        Some(b) if visible => Json(VersionedEnvelope {
            version: "sim".into(),
            data: BlockSummaryDoc::from(b),
        })
        .into_response(),
        _ => error(StatusCode::NOT_FOUND, format!("no block at slot {slot}")),
    }
}

async fn genesis(State(st): State<Shared>) -> Response {
    st.wait_while_down().await;
    Json(Envelope {
        data: GenesisDoc {
            genesis_time: st.clock.genesis_wall_ms.div_euclid(1000) as u64,
            genesis_validators_root: clperf_sim::genesis_root(st.run.truth.seed),
            genesis_fork_version: "0x00000000".into(),
            genesis_time_ms: Some(st.clock.genesis_wall_ms),
        },
    })
    .into_response()
}

async fn config_spec(State(st): State<Shared>) -> Response {
    st.wait_while_down().await;
    Json(Envelope {
        data: spec_doc(&st.run.truth.spec, Some(st.clock.wall_ms_per_slot)),
    })
    .into_response()
}

#[derive(Deserialize)]
struct EpochQuery {
    epoch: Option<u64>,
}

async fn committees(State(st): State<Shared>, Path(_state): Path<String>, Query(q): Query<EpochQuery>) -> Response {
    st.wait_while_down().await;
    let spec = &st.run.truth.spec;
    let epoch = q
        .epoch
        .unwrap_or_else(|| st.clock.protocol_now().max(0) as u64 / st.ms_per_slot() / spec.slots_per_epoch);
    let Some(duties) = st.run.truth.duties.get(epoch as usize) else {
        return error(StatusCode::NOT_FOUND, format!("epoch {epoch} outside the simulated run"));
    };
    let docs: Vec<CommitteeDoc> = duties
        .slots()
        .flat_map(|slot| {
            duties.committees_at(slot).iter().enumerate().map(move |(i, c)| CommitteeDoc {
                index: i as u64,
                slot: slot.0,
                validators: c.iter().map(|v| v.0).collect(),
            })
        })
        .collect();
    Json(Envelope { data: docs }).into_response()
}

fn router(state: Shared) -> Router {
    Router::new()
        .route("/eth/v1/events", get(events))
        .route("/eth/v1/node/syncing", get(syncing))
        .route("/eth/v2/validator/blocks/{slot}", get(produce_block))
        .route("/eth/v2/beacon/blocks/{slot}", get(canonical_block))
        .route("/eth/v1/beacon/genesis", get(genesis))
        .route("/eth/v1/config/spec", get(config_spec))
        .route("/eth/v1/beacon/states/{state_id}/committees", get(committees))
        .with_state(state)
}

pub struct ServedNode {
    pub label: NodeLabel,
    pub addr: SocketAddr,
    production_requests: Arc<AtomicU64>,
}

impl ServedNode {
    /// Block-production requests received so far.
    pub fn production_requests(&self) -> u64 {
        self.production_requests.load(Ordering::SeqCst)
    }

    pub fn endpoint(&self) -> NodeEndpoint {
        NodeEndpoint::new(format!("http://{}", self.addr), self.label.clone())
    }
}

/// All nodes of a run, each on its own loopback port. Dropping it stops the servers.
pub struct SimNetwork {
    pub nodes: Vec<ServedNode>,
    pub clock: SimClock,
    tasks: Vec<JoinHandle<()>>,
}

impl SimNetwork {
    /// Binds one ephemeral loopback port per node.
    pub async fn start(run: Arc<RunOutput>, clock: SimClock) -> std::io::Result<Self> {
        Self::start_on(run, clock, None).await
    }

    /// With `base_port`, node `i` listens on `base_port + i`.
    pub async fn start_on(run: Arc<RunOutput>, clock: SimClock, base_port: Option<u16>) -> std::io::Result<Self> {
        let ms = run.truth.spec.ms_per_slot();
        let mut nodes = Vec::new();
        let mut tasks = Vec::new();
        for (i, label) in run.truth.nodes.iter().enumerate() {
            let windows = |kind: FaultKind| -> Vec<(i64, i64)> {
                run.truth
                    .faults
                    .iter()
                    .filter(|f| f.node == label.node_id && f.kind == kind)
                    .map(|f| {
                        let (a, b) = f.window_ms(ms);
                        (a as i64, b as i64)
                    })
                    .collect()
            };
            let candidates = run
                .truth
                .candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| c.node as usize == i)
                .map(|(j, c)| (c.slot.0, j))
                .collect();
            let counter = Arc::new(AtomicU64::new(0));
            let state = Arc::new(NodeState {
                run: Arc::clone(&run),
                node: i,
                clock,
                down: windows(FaultKind::NodeDown),
                dropped: windows(FaultKind::StreamDrop),
                candidates,
                production_requests: Arc::clone(&counter),
            });
            let port = base_port.map_or(0, |p| p + i as u16);
            let listener = TcpListener::bind(("127.0.0.1", port)).await?;
            let addr = listener.local_addr()?;
            let app = router(state);
            tasks.push(tokio::spawn(async move {
                let _ = axum::serve(listener, app).await;
            }));
            nodes.push(ServedNode {
                label: label.clone(),
                addr,
                production_requests: counter,
            });
        }
        Ok(Self { nodes, clock, tasks })
    }

    pub fn endpoints(&self) -> Vec<NodeEndpoint> {
        self.nodes.iter().map(ServedNode::endpoint).collect()
    }

    /// Resolves when every server task has ended, which only happens on error.
    pub async fn join(mut self) {
        for t in std::mem::take(&mut self.tasks) {
            let _ = t.await;
        }
    }
}

impl Drop for SimNetwork {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}
