//! Discrete-event engine.
//!
//! One event queue ordered by `(time, class, node, id)`. Within one millisecond,
//! fault recoveries run first, then slot starts, message processing, the attestation
//! step and the aggregation step. Every message samples its latency from its own RNG
//! keyed by `(seed, kind, slot, from, to)`, so changing one region's latency leaves
//! every other draw untouched.
//!
//! The canonical chain is linear: each slot whose proposer is up and in sync gets a
//! block on top of the previous canonical block, and nodes import blocks in order.
//! A block a node imports after the slot's attestation deadline, having already
//! attested on its parent, is logged as a depth-1 reorg at that node.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};

use clperf_core::{
    evaluate_attestation, match_claims, Aggregate, AttestationRecord, Bits, BlockSummary, ChainSpec, ChainView,
    Checkpoint, ClaimMatch, Epoch, EpochDuties, EpochPerformance, EventKind, FlagVector, NodeLabel, ReorgEvent,
    RewardWeights, Root, Slot, SyncState, ValidatorId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, FaultKind, SimConfig};
use crate::truth::{
    AttestationOutcome, CandidateOutcome, CandidateResult, GroundTruth, MessageKind, MessageTrace, NodeEvent,
    NodeStream, RunOutput, StreamItem, StreamStats, Unavailable,
};

const RECOVER: u8 = 0;
const SLOT_START: u8 = 1;
const DELIVER: u8 = 2;
const ATTEST: u8 = 3;
const AGGREGATE: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: u64,
    class: u8,
    node: u32,
    id: u64,
}

/// Claimed checkpoints and head of a vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct AttData {
    slot: u64,
    source: (Epoch, Root),
    target: (Epoch, Root),
    head: Root,
}

impl AttData {
    fn record(&self, validator: ValidatorId, inclusion: Option<u64>) -> AttestationRecord {
        AttestationRecord {
            validator,
            attested_slot: Slot(self.slot),
            claimed_source: Checkpoint { epoch: self.source.0, root: self.source.1 },
            claimed_target: Checkpoint { epoch: self.target.0, root: self.target.1 },
            claimed_head: self.head,
            inclusion_slot: inclusion.map(Slot),
        }
    }
}

#[derive(Clone, Debug)]
struct Vote {
    validator: ValidatorId,
    committee: u64,
    position: u32,
    data: AttData,
}

#[derive(Clone, Debug)]
struct PoolAgg {
    committee: u64,
    data: AttData,
    bits: Bits,
}

#[derive(Debug)]
struct Built {
    slot: u64,
    node: u32,
    root: Root,
    aggs: Vec<PoolAgg>,
    sync: Vec<ValidatorId>,
}

#[derive(Debug)]
enum Payload {
    Block(u64),
    Votes(Vec<Vote>),
    Sync(u64, Vec<(ValidatorId, Root)>),
    Aggregates(Vec<PoolAgg>),
}

#[derive(Clone, Copy, Debug)]
struct Profile {
    median_ms: f64,
    sigma: f64,
    shift_ms: f64,
}

struct Window {
    start: u64,
    end: u64,
    skew_ms: i64,
    gap_emitted: bool,
}

impl Window {
    fn contains(&self, t: u64) -> bool {
        (self.start..self.end).contains(&t)
    }
}

struct Node {
    region: usize,
    load: f64,
    processing_ms: f64,
    jitter_ms: f64,
    view: ChainView,
    /// Length of the imported prefix of the canonical block list.
    imported: usize,
    ready: HashSet<u64>,
    block_trace: HashMap<u64, usize>,
    votes: HashMap<(u64, u64), Vec<(u32, AttData)>>,
    pool: BTreeMap<(u64, u64, AttData), Bits>,
    included: HashSet<(u64, u64, u32)>,
    sync_sigs: BTreeMap<u64, Vec<(ValidatorId, Root)>>,
    attested: Vec<bool>,
    backlog: Vec<usize>,
    down: Vec<Window>,
    skew: Vec<Window>,
    drops: Vec<Window>,
    stream: Vec<StreamItem>,
    stats: StreamStats,
    sync_states: Vec<SyncState>,
}

impl Node {
    fn is_down(&self, t: u64) -> bool {
        self.down.iter().any(|w| w.contains(t))
    }
}

struct Produced {
    vote: Vote,
    node: u32,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    spec: ChainSpec,
    seed: [u8; 32],
    ms: u64,
    total_slots: u64,
    nodes: Vec<Node>,
    labels: Vec<NodeLabel>,
    latency: Vec<Vec<Option<Profile>>>,
    validator_nodes: Vec<u32>,
    duties: Vec<EpochDuties>,
    block_extra: HashMap<u64, u64>,
    queue: BinaryHeap<Reverse<Event>>,
    traces: Vec<MessageTrace>,
    trace_payload: Vec<usize>,
    payloads: Vec<Payload>,
    canonical: ChainView,
    block_slots: Vec<u64>,
    canonical_built: Vec<usize>,
    canonical_included: HashSet<(u64, u64, u32)>,
    built: Vec<Built>,
    candidates: Vec<(u64, u32, u64, Result<usize, Unavailable>)>,
    produced: Vec<Produced>,
    reorgs: Vec<ReorgEvent>,
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Seed bytes shared by duty assignment and root derivation.
pub fn seed_bytes(seed: u64) -> [u8; 32] {
    digest(&[b"clperf-sim", &seed.to_le_bytes()])
}

pub fn genesis_root(seed: u64) -> Root {
    Root(digest(&[b"genesis", &seed_bytes(seed)]))
}

fn block_root(seed: &[u8; 32], slot: u64, node: u32) -> Root {
    Root(digest(&[b"block", seed, &slot.to_le_bytes(), &node.to_le_bytes()]))
}

/// Run a scenario to completion.
pub fn run(config: &SimConfig) -> Result<RunOutput, ConfigError> {
    config.validate()?;
    let mut sim = Sim::new(config);
    sim.schedule();
    while let Some(Reverse(ev)) = sim.queue.pop() {
        match ev.class {
            RECOVER => sim.recover(ev.node as usize, ev.time),
            SLOT_START => sim.slot_start(ev.id),
            DELIVER => sim.deliver(ev.id as usize, ev.time),
            ATTEST => sim.attest(ev.id),
            AGGREGATE => sim.aggregate(ev.id),
            _ => unreachable!("unknown event class"),
        }
    }
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let spec = cfg.spec.clone();
        let seed = seed_bytes(cfg.seed);
        let ms = spec.ms_per_slot();
        let total_slots = cfg.total_slots();
        let region_index = |name: &str| cfg.regions.iter().position(|r| r.name == name).expect("validated");
        let latency = cfg
            .regions
            .iter()
            .map(|from| {
                cfg.regions
                    .iter()
                    .map(|to| {
                        cfg.latency(&from.name, &to.name).map(|l| Profile {
                            median_ms: l.median_ms,
                            sigma: l.sigma,
                            shift_ms: l.shift_ms,
                        })
                    })
                    .collect()
            })
            .collect();
        let genesis = genesis_root(cfg.seed);
        let window = |f: &crate::config::Fault| {
            let (start, end) = f.window_ms(ms);
            Window { start, end, skew_ms: f.skew_ms, gap_emitted: false }
        };
        let nodes = cfg
            .nodes
            .iter()
            .map(|n| {
                let region = region_index(&n.region);
                let profile = &cfg.regions[region];
                let faults = |kind| {
                    cfg.faults
                        .iter()
                        .filter(|f| f.node == n.id && f.kind == kind)
                        .map(window)
                        .collect()
                };
                Node {
                    region,
                    load: n.peer_count.unwrap_or(profile.peer_count) as f64 / 50.0,
                    processing_ms: n.processing_ms.unwrap_or(profile.processing_ms),
                    jitter_ms: n.jitter_ms.unwrap_or(profile.jitter_ms),
                    view: ChainView::new(genesis, &spec),
                    imported: 0,
                    ready: HashSet::new(),
                    block_trace: HashMap::new(),
                    votes: HashMap::new(),
                    pool: BTreeMap::new(),
                    included: HashSet::new(),
                    sync_sigs: BTreeMap::new(),
                    attested: vec![false; total_slots as usize],
                    backlog: Vec::new(),
                    down: faults(FaultKind::NodeDown),
                    skew: faults(FaultKind::ClockSkew),
                    drops: faults(FaultKind::StreamDrop),
                    stream: Vec::new(),
                    stats: StreamStats::default(),
                    sync_states: Vec::new(),
                }
            })
            .collect();
        let epochs = total_slots.div_ceil(spec.slots_per_epoch);
        let duties = (0..epochs)
            .map(|e| clperf_core::assign_duties(cfg.validators, Epoch(e), &seed, &spec))
            .collect();
        Self {
            cfg,
            seed,
            ms,
            total_slots,
            nodes,
            labels: cfg.node_labels(),
            latency,
            validator_nodes: cfg.validator_nodes(),
            duties,
            block_extra: cfg.block_delays.iter().map(|d| (d.slot, d.extra_ms)).collect(),
            queue: BinaryHeap::new(),
            traces: Vec::new(),
            trace_payload: Vec::new(),
            payloads: Vec::new(),
            canonical: ChainView::new(genesis, &spec),
            block_slots: Vec::new(),
            canonical_built: Vec::new(),
            canonical_included: HashSet::new(),
            built: Vec::new(),
            candidates: Vec::new(),
            produced: Vec::new(),
            reorgs: Vec::new(),
            spec,
        }
    }

    fn push(&mut self, time: u64, class: u8, node: u32, id: u64) {
        self.queue.push(Reverse(Event { time, class, node, id }));
    }

    fn schedule(&mut self) {
        for s in 0..self.total_slots {
            let t = s * self.ms;
            self.push(t, SLOT_START, 0, s);
            self.push(t + self.spec.attestation_deadline_ms(), ATTEST, 0, s);
            self.push(t + self.spec.aggregation_deadline_ms(), AGGREGATE, 0, s);
        }
        let ends: Vec<(u32, u64)> = self
            .nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.down.iter().map(move |w| (i as u32, w.end)))
            .collect();
        for (i, (node, end)) in ends.into_iter().enumerate() {
            self.push(end, RECOVER, node, i as u64);
        }
    }

    fn duties(&self, slot: u64) -> &EpochDuties {
        &self.duties[(slot / self.spec.slots_per_epoch) as usize]
    }

    /// Network latency and processing time of one delivery, in ms.
    fn delays(&self, kind: MessageKind, slot: u64, from: u32, to: u32) -> (u64, u64) {
        let key = digest(&[
            &self.seed,
            &[kind as u8],
            &slot.to_le_bytes(),
            &from.to_le_bytes(),
            &to.to_le_bytes(),
        ]);
        let mut rng = ChaCha8Rng::from_seed(key);
        let (src, dst) = (&self.nodes[from as usize], &self.nodes[to as usize]);
        let latency = match self.latency[src.region][dst.region] {
            None => 0.0,
            Some(p) => {
                let mut v = 0.0;
                // negative samples (possible with a negative shift) are redrawn
                for _ in 0..64 {
                    let z: f64 = rng.sample(StandardNormal);
                    v = p.shift_ms + p.median_ms * (p.sigma * z).exp();
                    if v >= 0.0 {
                        break;
                    }
                }
                v.max(0.0)
            }
        };
        let u: f64 = rng.random();
        let processing = (dst.processing_ms + dst.jitter_ms * u) * dst.load;
        (latency.round() as u64, processing.round() as u64)
    }

    fn send(&mut self, kind: MessageKind, slot: u64, from: u32, payload: Payload, now: u64, extra_ms: u64) {
        let p = self.payloads.len();
        self.payloads.push(payload);
        for to in 0..self.nodes.len() as u32 {
            if to == from {
                continue;
            }
            let (latency, processing) = self.delays(kind, slot, from, to);
            let receive = now + latency + extra_ms;
            let id = self.traces.len();
            self.traces.push(MessageTrace {
                id: id as u64,
                kind,
                slot: Slot(slot),
                from,
                to,
                send_ms: now,
                receive_ms: receive,
                processed_ms: None,
            });
            self.trace_payload.push(p);
            self.push(receive + processing, DELIVER, to, id as u64);
        }
    }

    fn deliver(&mut self, trace: usize, t: u64) {
        let n = self.traces[trace].to as usize;
        if self.nodes[n].is_down(t) {
            self.nodes[n].backlog.push(trace);
        } else {
            self.apply(trace, t, false);
        }
    }

    /// Import everything received while down, without publishing events.
    fn recover(&mut self, n: usize, t: u64) {
        let backlog = std::mem::take(&mut self.nodes[n].backlog);
        for trace in backlog {
            self.apply(trace, t, true);
        }
    }

    fn apply(&mut self, trace: usize, t: u64, silent: bool) {
        let n = self.traces[trace].to as usize;
        let node = &mut self.nodes[n];
        match &self.payloads[self.trace_payload[trace]] {
            Payload::Block(slot) => {
                let slot = *slot;
                node.ready.insert(slot);
                node.block_trace.insert(slot, trace);
                self.try_import(n, t, silent);
                return;
            }
            Payload::Votes(votes) => {
                for v in votes {
                    node.votes
                        .entry((v.data.slot, v.committee))
                        .or_default()
                        .push((v.position, v.data));
                }
            }
            Payload::Sync(slot, sigs) => node.sync_sigs.entry(*slot).or_default().extend(sigs.iter().copied()),
            Payload::Aggregates(aggs) => {
                for a in aggs {
                    node.pool
                        .entry((a.data.slot, a.committee, a.data))
                        .or_insert_with(|| Bits::zeros(a.bits.len()))
                        .union_with(&a.bits);
                }
            }
        }
        self.traces[trace].processed_ms = Some(t);
    }

    fn try_import(&mut self, n: usize, t: u64, silent: bool) {
        loop {
            let idx = self.nodes[n].imported;
            let Some(&slot) = self.block_slots.get(idx) else { break };
            if !self.nodes[n].ready.remove(&slot) {
                break;
            }
            self.import(n, idx, t, silent);
            self.nodes[n].imported += 1;
        }
    }

    fn import(&mut self, n: usize, idx: usize, t: u64, silent: bool) {
        let built = &self.built[self.canonical_built[idx]];
        let (slot, root) = (built.slot, built.root);
        let node = &mut self.nodes[n];
        node.view.set_visible(Slot(slot), Some(t));
        if let Some(trace) = node.block_trace.remove(&slot) {
            self.traces[trace].processed_ms = Some(t);
        }
        for agg in &built.aggs {
            for pos in agg.bits.ones() {
                node.included.insert((agg.data.slot, agg.committee, pos as u32));
            }
        }
        if silent {
            return;
        }
        self.emit(n, EventKind::Block, slot, root, t, None);
        self.emit(n, EventKind::Head, slot, root, t, None);
        let deadline = slot * self.ms + self.spec.attestation_deadline_ms();
        if t > deadline && self.nodes[n].attested[slot as usize] {
            self.reorgs.push(ReorgEvent {
                node: self.labels[n].clone(),
                slot: Slot(slot),
                depth: Some(1),
            });
            self.emit(n, EventKind::ChainReorg, slot, root, t, Some(1));
        }
    }

    fn emit(&mut self, n: usize, kind: EventKind, slot: u64, root: Root, t: u64, depth: Option<u64>) {
        let node = &mut self.nodes[n];
        let is_block = kind == EventKind::Block;
        node.stats.emitted += 1;
        node.stats.blocks_emitted += is_block as u64;
        if let Some(w) = node.drops.iter_mut().find(|w| w.contains(t)) {
            node.stats.dropped += 1;
            node.stats.blocks_dropped += is_block as u64;
            if !w.gap_emitted {
                w.gap_emitted = true;
                node.stream.push(StreamItem::Gap { at_ms: t });
            }
            return;
        }
        let skew = node.skew.iter().find(|w| w.contains(t)).map_or(0, |w| w.skew_ms);
        node.stream.push(StreamItem::Event(NodeEvent {
            kind,
            slot: Slot(slot),
            root,
            at_ms: t as i64 + skew,
            depth,
        }));
    }

    fn slot_start(&mut self, s: u64) {
        let t = s * self.ms;
        let canon_latest = self.block_slots.last().copied();
        let mut synced = Vec::with_capacity(self.nodes.len());
        for node in &mut self.nodes {
            let local_latest = node.imported.checked_sub(1).map(|i| self.block_slots[i]);
            let lag = match (canon_latest, local_latest) {
                (None, _) => 0,
                (Some(c), None) => c + 1,
                (Some(c), Some(l)) => c - l,
            };
            let ok = !node.is_down(t) && lag <= 2;
            if s < self.cfg.duration_slots {
                node.sync_states.push(if ok { SyncState::Synced } else { SyncState::OutOfSync });
            }
            synced.push(ok);
        }

        let proposer = self.duties(s).proposer(Slot(s)).expect("duties cover the run");
        let pn = self.validator_nodes[proposer.0 as usize] as usize;
        let mut proposal = None;
        for n in 0..self.nodes.len() {
            let result = if self.nodes[n].is_down(t) {
                Err(Unavailable::Down)
            } else if !synced[n] {
                Err(Unavailable::OutOfSync)
            } else {
                let b = self.build(n, s);
                self.built.push(b);
                Ok(self.built.len() - 1)
            };
            if n == pn {
                proposal = result.ok();
            }
            let delay = self.cfg.nodes[n].api_delay_ms;
            self.candidates.push((s, n as u32, delay, result));
        }

        match proposal {
            Some(candidate) => {
                let idx = self.reconcile(candidate);
                let root = self.built[idx].root;
                self.canonical.push_block(root);
                for node in &mut self.nodes {
                    node.view.push_block_visible(root, None);
                }
                self.block_slots.push(s);
                self.canonical_built.push(idx);
                self.nodes[pn].ready.insert(s);
                self.try_import(pn, t, false);
                let extra = self.block_extra.get(&s).copied().unwrap_or(0);
                self.send(MessageKind::Block, s, pn as u32, Payload::Block(s), t, extra);
            }
            None => {
                self.canonical.push_empty();
                for node in &mut self.nodes {
                    node.view.push_empty();
                }
            }
        }
    }

    /// The proposer builds on the canonical parent even when it has not imported it yet,
    /// so votes the canonical chain already carries are dropped from its candidate.
    fn reconcile(&mut self, candidate: usize) -> usize {
        let c = &self.built[candidate];
        let aggs: Vec<PoolAgg> = c
            .aggs
            .iter()
            .filter_map(|a| {
                let mut bits = Bits::zeros(a.bits.len());
                for pos in a.bits.ones() {
                    if self.canonical_included.insert((a.data.slot, a.committee, pos as u32)) {
                        bits.set(pos);
                    }
                }
                (bits.count_ones() > 0).then(|| PoolAgg { bits, ..a.clone() })
            })
            .collect();
        if aggs.len() == c.aggs.len() && aggs.iter().zip(&c.aggs).all(|(a, b)| a.bits == b.bits) {
            return candidate;
        }
        let block = Built { slot: c.slot, node: c.node, root: c.root, aggs, sync: c.sync.clone() };
        self.built.push(block);
        self.built.len() - 1
    }

    /// Block a node would produce at slot start from its local pool.
    fn build(&self, n: usize, s: u64) -> Built {
        let node = &self.nodes[n];
        let oldest = s.saturating_sub(self.spec.slots_per_epoch);
        let mut aggs: Vec<PoolAgg> = node
            .pool
            .iter()
            .filter(|((slot, _, _), _)| (oldest..s).contains(slot))
            .filter_map(|(&(slot, committee, data), bits)| {
                let mut fresh = Bits::zeros(bits.len());
                for pos in bits.ones() {
                    if !node.included.contains(&(slot, committee, pos as u32)) {
                        fresh.set(pos);
                    }
                }
                (fresh.count_ones() > 0).then_some(PoolAgg { committee, data, bits: fresh })
            })
            .collect();
        aggs.sort_by_key(|a| (Reverse(a.data.slot), a.committee, a.data));
        aggs.truncate(self.spec.max_aggregations_per_block as usize);

        let parent = self.canonical.tip_root();
        let sync = match s.checked_sub(1).and_then(|p| node.sync_sigs.get(&p)) {
            Some(sigs) => sigs
                .iter()
                .filter(|(_, root)| *root == parent)
                .map(|(v, _)| *v)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            None => Vec::new(),
        };
        Built {
            slot: s,
            node: n as u32,
            root: block_root(&self.seed, s, n as u32),
            aggs,
            sync,
        }
    }

    fn attest(&mut self, s: u64) {
        let t = s * self.ms + self.spec.attestation_deadline_ms();
        let epoch = Epoch(s / self.spec.slots_per_epoch);
        let n_nodes = self.nodes.len();
        let mut voters: Vec<Vec<(ValidatorId, u64, u32)>> = vec![Vec::new(); n_nodes];
        let mut signers: Vec<Vec<ValidatorId>> = vec![Vec::new(); n_nodes];
        {
            let duties = self.duties(s);
            for (c, members) in duties.committees_at(Slot(s)).iter().enumerate() {
                for (pos, v) in members.iter().enumerate() {
                    voters[self.validator_nodes[v.0 as usize] as usize].push((*v, c as u64, pos as u32));
                }
            }
            for v in duties.sync_committee() {
                signers[self.validator_nodes[v.0 as usize] as usize].push(*v);
            }
        }
        for n in 0..n_nodes {
            let node = &mut self.nodes[n];
            if node.is_down(t) {
                continue;
            }
            node.attested[s as usize] = true;
            let source = node.view.justified_at(Slot(s), Some(t));
            let target = node.view.target_at(epoch, Some(t));
            let head = node.view.head_at_time(t);
            let data = AttData {
                slot: s,
                source: (source.epoch, source.root),
                target: (target.epoch, target.root),
                head,
            };
            let votes: Vec<Vote> = voters[n]
                .iter()
                .map(|&(validator, committee, position)| Vote { validator, committee, position, data })
                .collect();
            for v in &votes {
                node.votes.entry((s, v.committee)).or_default().push((v.position, data));
                self.produced.push(Produced { vote: v.clone(), node: n as u32 });
            }
            if !votes.is_empty() {
                self.send(MessageKind::Votes, s, n as u32, Payload::Votes(votes), t, 0);
            }
            let sigs: Vec<(ValidatorId, Root)> = signers[n].iter().map(|v| (*v, head)).collect();
            if !sigs.is_empty() {
                self.nodes[n].sync_sigs.entry(s).or_default().extend(sigs.iter().copied());
                self.send(MessageKind::SyncSignatures, s, n as u32, Payload::Sync(s, sigs), t, 0);
            }
        }
    }

    fn aggregate(&mut self, s: u64) {
        let t = s * self.ms + self.spec.aggregation_deadline_ms();
        for n in 0..self.nodes.len() {
            if self.nodes[n].is_down(t) {
                continue;
            }
            let mut out = Vec::new();
            let duties = self.duties(s);
            for (c, members) in duties.committees_at(Slot(s)).iter().enumerate() {
                let c = c as u64;
                let hosts_aggregator = duties
                    .aggregators(Slot(s), c)
                    .iter()
                    .any(|v| self.validator_nodes[v.0 as usize] as usize == n);
                if !hosts_aggregator {
                    continue;
                }
                let Some(votes) = self.nodes[n].votes.get(&(s, c)) else { continue };
                let mut groups: BTreeMap<AttData, Bits> = BTreeMap::new();
                for (pos, data) in votes {
                    groups
                        .entry(*data)
                        .or_insert_with(|| Bits::zeros(members.len()))
                        .set(*pos as usize);
                }
                out.extend(groups.into_iter().map(|(data, bits)| PoolAgg { committee: c, data, bits }));
            }
            if out.is_empty() {
                continue;
            }
            let node = &mut self.nodes[n];
            for a in &out {
                node.pool
                    .entry((s, a.committee, a.data))
                    .or_insert_with(|| Bits::zeros(a.bits.len()))
                    .union_with(&a.bits);
            }
            self.send(MessageKind::Aggregates, s, n as u32, Payload::Aggregates(out), t, 0);
        }
        let spe = self.spec.slots_per_epoch;
        for node in &mut self.nodes {
            node.votes.retain(|(slot, _), _| *slot > s);
            node.pool.retain(|(slot, _, _), _| slot + spe > s);
            node.included.retain(|(slot, _, _)| slot + spe + 2 > s);
            node.sync_sigs.retain(|slot, _| slot + 2 > s);
        }
    }

    fn summary(&self, b: &Built, claims: &mut HashMap<AttData, ClaimMatch>) -> BlockSummary {
        let parent = match b.slot.checked_sub(1) {
            Some(p) => self.canonical.canonical_head(Slot(p)),
            None => self.canonical.genesis_root(),
        };
        let aggregates = b
            .aggs
            .iter()
            .map(|a| Aggregate {
                attested_slot: Slot(a.data.slot),
                committee_index: a.committee,
                bits: a.bits.clone(),
                claims: *claims.entry(a.data).or_insert_with(|| {
                    match_claims(&a.data.record(ValidatorId(0), None), &self.canonical, &self.spec)
                        .expect("canonical view covers every attested slot")
                }),
            })
            .collect();
        let proposer = self.duties(b.slot).proposer(Slot(b.slot)).expect("duties cover the run");
        BlockSummary {
            slot: Slot(b.slot),
            proposer,
            parent_root: parent,
            root: b.root,
            aggregates,
            sync_bits: b.sync.len() as u64,
            attester_slashings: 0,
            proposer_slashings: 0,
            source: self.labels[b.node as usize].clone(),
        }
    }

    fn finish(self) -> RunOutput {
        let spec = &self.spec;
        let spe = spec.slots_per_epoch;
        let mut claims = HashMap::new();
        let blocks: Vec<BlockSummary> = self
            .canonical_built
            .iter()
            .map(|&i| self.summary(&self.built[i], &mut claims))
            .collect();

        let mut first_inclusion: HashMap<(u64, u64, u32), u64> = HashMap::new();
        for &i in &self.canonical_built {
            let b = &self.built[i];
            for a in &b.aggs {
                for pos in a.bits.ones() {
                    first_inclusion.entry((a.data.slot, a.committee, pos as u32)).or_insert(b.slot);
                }
            }
        }
        let attestations: Vec<AttestationOutcome> = self
            .produced
            .iter()
            .map(|p| {
                let v = &p.vote;
                let inclusion = first_inclusion.get(&(v.data.slot, v.committee, v.position)).copied();
                let record = v.data.record(v.validator, inclusion);
                let flags = evaluate_attestation(&record, &self.canonical, spec)
                    .expect("simulated votes are well formed");
                AttestationOutcome {
                    record,
                    node: p.node,
                    committee_index: v.committee,
                    committee_position: v.position,
                    flags,
                }
            })
            .collect();
        let flags_of: HashMap<(ValidatorId, Slot), FlagVector> = attestations
            .iter()
            .map(|a| ((a.record.validator, a.record.attested_slot), a.flags))
            .collect();

        let signers: HashMap<u64, &[ValidatorId]> = self
            .canonical_built
            .iter()
            .map(|&i| (self.built[i].slot, self.built[i].sync.as_slice()))
            .collect();
        let weights = RewardWeights::default();
        let base = self.cfg.base_reward as f64;
        let mut performances = Vec::new();
        for duties in self.duties.iter().take((self.cfg.duration_slots / spe) as usize) {
            let mut signed: HashMap<ValidatorId, u64> = HashMap::new();
            for s in duties.slots() {
                for v in signers.get(&(s.0 + 1)).copied().unwrap_or_default() {
                    *signed.entry(*v).or_default() += 1;
                }
            }
            for a in duties.assignments() {
                let flags = flags_of
                    .get(&(a.validator, a.attestation_slot))
                    .copied()
                    .unwrap_or(FlagVector::MISSED);
                let fulfilled = a.proposer_slots.iter().filter(|s| self.canonical.block(**s).is_some()).count();
                let node = self.labels[self.validator_nodes[a.validator.0 as usize] as usize].clone();
                performances.push(EpochPerformance::compute(
                    &a,
                    node,
                    flags,
                    fulfilled as u64,
                    signed.get(&a.validator).copied().unwrap_or(0),
                    &weights,
                    base,
                    spec,
                ));
            }
        }

        let candidates = self
            .candidates
            .iter()
            .map(|&(slot, node, response_ms, result)| CandidateOutcome {
                slot: Slot(slot),
                node,
                response_ms,
                result: match result {
                    Ok(i) => CandidateResult::Block(self.summary(&self.built[i], &mut claims)),
                    Err(u) => CandidateResult::Unavailable(u),
                },
            })
            .collect();

        let streams = self
            .nodes
            .iter()
            .zip(&self.labels)
            .map(|(n, label)| NodeStream { node: label.clone(), items: n.stream.clone() })
            .collect();
        let truth = GroundTruth {
            seed: self.cfg.seed,
            spec: spec.clone(),
            duration_slots: self.cfg.duration_slots,
            base_reward: self.cfg.base_reward,
            nodes: self.labels.clone(),
            validator_nodes: self.validator_nodes.clone(),
            duties: self.duties.clone(),
            canonical: self.canonical.clone(),
            blocks,
            local_views: self.nodes.iter().map(|n| n.view.clone()).collect(),
            messages: self.traces.clone(),
            attestations,
            performances,
            candidates,
            sync_states: self.nodes.iter().map(|n| n.sync_states.clone()).collect(),
            reorgs: self.reorgs.clone(),
            faults: self.cfg.faults.clone(),
            stream_stats: self.nodes.iter().map(|n| n.stats.clone()).collect(),
        };
        RunOutput { streams, truth }
    }
}
