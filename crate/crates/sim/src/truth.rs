//! Simulation outputs: per-node event streams and the ground-truth log.

use clperf_core::{
    AttestationRecord, BlockSummary, ChainSpec, ChainView, CommitteeLookup, EpochDuties, EventKind, FlagVector, NodeLabel,
    Performance, ReorgEvent, Root, Slot, SyncSpan, SyncState, ValidatorId,
};
use serde::{Deserialize, Serialize};

use crate::config::Fault;

/// A notification a node publishes on its event stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEvent {
    pub kind: EventKind,
    pub slot: Slot,
    pub root: Root,
    /// Emission time by the node's clock, ms since genesis; skewed clocks shift it.
    pub at_ms: i64,
    /// Blocks displaced, for `chain_reorg` events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamItem {
    Event(NodeEvent),
    /// Events were lost from here on; marks the start of a stream drop window.
    Gap { at_ms: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStream {
    pub node: NodeLabel,
    pub items: Vec<StreamItem>,
}

impl NodeStream {
    pub fn events(&self) -> impl Iterator<Item = &NodeEvent> {
        self.items.iter().filter_map(|i| match i {
            StreamItem::Event(e) => Some(e),
            StreamItem::Gap { .. } => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Block,
    Votes,
    SyncSignatures,
    Aggregates,
}

/// One point-to-point delivery.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTrace {
    pub id: u64,
    pub kind: MessageKind,
    pub slot: Slot,
    pub from: u32,
    pub to: u32,
    pub send_ms: u64,
    pub receive_ms: u64,
    /// `None` when the receiver never got to it (down until the run ended).
    pub processed_ms: Option<u64>,
}

/// A vote cast by a validator and what became of it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationOutcome {
    /// `inclusion_slot` is the first canonical block carrying the vote; `None` = expired.
    pub record: AttestationRecord,
    pub node: u32,
    pub committee_index: u64,
    pub committee_position: u32,
    pub flags: FlagVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unavailable {
    OutOfSync,
    Down,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateResult {
    Block(BlockSummary),
    Unavailable(Unavailable),
}

/// A node's answer to a block production request at slot start.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub slot: Slot,
    pub node: u32,
    /// Response time after slot start.
    pub response_ms: u64,
    pub result: CandidateResult,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    /// Events the node produced, including those lost to stream drops.
    pub emitted: u64,
    pub dropped: u64,
    pub blocks_emitted: u64,
    pub blocks_dropped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub spec: ChainSpec,
    pub duration_slots: u64,
    pub base_reward: u64,
    pub nodes: Vec<NodeLabel>,
    /// Hosting node index per validator.
    pub validator_nodes: Vec<u32>,
    pub duties: Vec<EpochDuties>,
    pub canonical: ChainView,
    /// Canonical blocks in slot order.
    pub blocks: Vec<BlockSummary>,
    /// Per node, block visibility is the local import time.
    pub local_views: Vec<ChainView>,
    pub messages: Vec<MessageTrace>,
    pub attestations: Vec<AttestationOutcome>,
    /// Full epochs within the measured duration.
    pub performances: Vec<Performance>,
    pub candidates: Vec<CandidateOutcome>,
    /// Per node, one state per measured slot.
    pub sync_states: Vec<Vec<SyncState>>,
    pub reorgs: Vec<ReorgEvent>,
    pub faults: Vec<Fault>,
    pub stream_stats: Vec<StreamStats>,
}

impl GroundTruth {
    pub fn node_index(&self, node_id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.node_id == node_id)
    }

    pub fn node_of(&self, validator: ValidatorId) -> &NodeLabel {
        &self.nodes[self.validator_nodes[validator.0 as usize] as usize]
    }

    pub fn block(&self, slot: Slot) -> Option<&BlockSummary> {
        self.blocks
            .binary_search_by_key(&slot, |b| b.slot)
            .ok()
            .map(|i| &self.blocks[i])
    }

    pub fn sync_spans(&self) -> Vec<SyncSpan> {
        self.nodes
            .iter()
            .zip(&self.sync_states)
            .flat_map(|(n, states)| clperf_core::telemetry::spans_from_states(n, Slot(0), states))
            .collect()
    }

    /// Slots in which `node` is affected by a fault of any kind.
    pub fn fault_slots(&self, node_id: &str) -> Vec<Slot> {
        let mut slots: Vec<Slot> = self
            .faults
            .iter()
            .filter(|f| f.node == node_id)
            .flat_map(|f| (f.first_slot..=f.last_slot).map(Slot))
            .collect();
        slots.sort();
        slots.dedup();
        slots
    }

    /// Epoch duties covering `slot`.
    pub fn duties_at(&self, slot: Slot) -> Option<&EpochDuties> {
        self.duties.get((slot.0 / self.spec.slots_per_epoch) as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub streams: Vec<NodeStream>,
    pub truth: GroundTruth,
}

/// Reorgs that emerged during the run, in emission order.
pub fn emergent_reorgs(output: &RunOutput) -> Vec<ReorgEvent> {
    output.truth.reorgs.clone()
}

impl CommitteeLookup for GroundTruth {
    fn committee(&self, slot: Slot, index: u64) -> Option<&[ValidatorId]> {
        self.duties_at(slot)?.committee(slot, index)
    }
}
