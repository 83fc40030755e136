//! Block arrival telemetry: offsets from slot start, latency CDFs, sync spans and reorgs.
//!
//! Offsets are integer milliseconds measured against genesis-relative slot starts, so
//! they do not depend on the collector's timezone. A receipt that predates its slot
//! start by less than the clock tolerance is clamped to 0 and skew-flagged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::TelemetryError;
use crate::labels::{GroupBy, NodeLabel};
use crate::slot::Slot;
use crate::spec::ChainSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Block,
    Head,
    ChainReorg,
}

impl EventKind {
    pub fn topic(self) -> &'static str {
        match self {
            EventKind::Block => "block",
            EventKind::Head => "head",
            EventKind::ChainReorg => "chain_reorg",
        }
    }

    pub fn from_topic(topic: &str) -> Option<Self> {
        match topic {
            "block" => Some(EventKind::Block),
            "head" => Some(EventKind::Head),
            "chain_reorg" => Some(EventKind::ChainReorg),
            _ => None,
        }
    }
}

/// Maps wall-clock milliseconds onto slots.
///
/// `ms_per_slot` is the wall duration of a slot. It differs from the protocol duration
/// only when following a time-scaled simulator; offsets are always reported in
/// protocol milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotClock {
    pub genesis_ms: i64,
    pub ms_per_slot: u64,
    pub protocol_ms_per_slot: u64,
    pub tolerance_ms: u64,
}

impl SlotClock {
    pub const DEFAULT_TOLERANCE_MS: u64 = 1000;

    pub fn from_spec(spec: &ChainSpec) -> Self {
        Self {
            genesis_ms: spec.genesis_time as i64 * 1000,
            ms_per_slot: spec.ms_per_slot(),
            protocol_ms_per_slot: spec.ms_per_slot(),
            tolerance_ms: Self::DEFAULT_TOLERANCE_MS,
        }
    }

    pub fn slot_start_ms(&self, slot: Slot) -> i64 {
        self.genesis_ms + (slot.0 * self.ms_per_slot) as i64
    }

    /// Slot containing wall time `ms`, or `None` before genesis.
    pub fn slot_at(&self, ms: i64) -> Option<Slot> {
        (ms >= self.genesis_ms).then(|| Slot((ms - self.genesis_ms) as u64 / self.ms_per_slot))
    }

    /// Wall delta converted to protocol milliseconds.
    pub fn to_protocol_ms(&self, wall_delta_ms: i64) -> i64 {
        if self.ms_per_slot == self.protocol_ms_per_slot {
            wall_delta_ms
        } else {
            (wall_delta_ms as i128 * self.protocol_ms_per_slot as i128 / self.ms_per_slot as i128) as i64
        }
    }
}

/// A notification as received from a node, timestamped at read time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedEvent {
    pub node: NodeLabel,
    pub kind: EventKind,
    pub slot: Slot,
    pub receipt_ms: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalRecord {
    pub node: NodeLabel,
    pub slot: Slot,
    pub arrival_offset_ms: u64,
    pub kind: EventKind,
    /// Set when the raw offset was negative and clamped.
    #[serde(default)]
    pub skew: bool,
}

pub fn record_arrival(event: &ObservedEvent, clock: &SlotClock) -> Result<ArrivalRecord, TelemetryError> {
    let raw = clock.to_protocol_ms(event.receipt_ms - clock.slot_start_ms(event.slot));
    if raw < -(clock.tolerance_ms as i64) {
        return Err(TelemetryError::ClockSkew {
            slot: event.slot,
            early_ms: -raw,
            tolerance_ms: clock.tolerance_ms,
        });
    }
    Ok(ArrivalRecord {
        node: event.node.clone(),
        slot: event.slot,
        arrival_offset_ms: raw.max(0) as u64,
        kind: event.kind,
        skew: raw < 0,
    })
}

pub const REPORTED_PERCENTILES: [u32; 7] = [10, 25, 50, 75, 90, 95, 99];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyCdf {
    pub count: usize,
    pub mean_ms: f64,
    /// `(percentile, offset_ms)` pairs, percentiles ascending.
    pub points: Vec<(u32, u64)>,
}

impl LatencyCdf {
    pub fn at(&self, percentile: u32) -> Option<u64> {
        self.points.iter().find(|(p, _)| *p == percentile).map(|(_, v)| *v)
    }

    pub fn median(&self) -> Option<u64> {
        self.at(50)
    }
}

/// Nearest-rank percentile of a sorted slice: the value at rank `ceil(p/100 · n)`.
pub fn nearest_rank(sorted: &[u64], percentile: u32) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len() as u64;
    let rank = (percentile as u64 * n).div_ceil(100).clamp(1, n);
    Some(sorted[rank as usize - 1])
}

pub fn latency_cdf(offsets: impl IntoIterator<Item = u64>) -> Result<LatencyCdf, TelemetryError> {
    latency_cdf_at(offsets, &REPORTED_PERCENTILES)
}

pub fn latency_cdf_at(
    offsets: impl IntoIterator<Item = u64>,
    percentiles: &[u32],
) -> Result<LatencyCdf, TelemetryError> {
    let mut sorted: Vec<u64> = offsets.into_iter().collect();
    if sorted.is_empty() {
        return Err(TelemetryError::Empty);
    }
    sorted.sort_unstable();
    let sum: u128 = sorted.iter().map(|&v| v as u128).sum();
    Ok(LatencyCdf {
        count: sorted.len(),
        mean_ms: sum as f64 / sorted.len() as f64,
        points: percentiles
            .iter()
            .map(|&p| (p, nearest_rank(&sorted, p).expect("non-empty")))
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncState {
    Synced,
    OutOfSync,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncSpan {
    pub node: NodeLabel,
    pub first_slot: Slot,
    pub last_slot: Slot,
    pub state: SyncState,
}

impl SyncSpan {
    pub fn len(&self) -> u64 {
        self.last_slot.0 - self.first_slot.0 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Collapse per-slot sync observations (starting at `first_slot`) into contiguous spans.
pub fn spans_from_states(node: &NodeLabel, first_slot: Slot, states: &[SyncState]) -> Vec<SyncSpan> {
    let mut spans: Vec<SyncSpan> = Vec::new();
    for (i, &state) in states.iter().enumerate() {
        let slot = Slot(first_slot.0 + i as u64);
        match spans.last_mut() {
            Some(last) if last.state == state => last.last_slot = slot,
            _ => spans.push(SyncSpan {
                node: node.clone(),
                first_slot: slot,
                last_slot: slot,
                state,
            }),
        }
    }
    spans
}

/// Out-of-sync percentage per node id over a window of `measured_slots`.
pub fn out_of_sync_ratio(spans: &[SyncSpan], measured_slots: u64) -> Result<BTreeMap<String, f64>, TelemetryError> {
    if measured_slots == 0 {
        return Err(TelemetryError::ZeroSlots);
    }
    let mut out: BTreeMap<String, u64> = BTreeMap::new();
    for span in spans {
        let count = out.entry(span.node.node_id.clone()).or_insert(0);
        if span.state == SyncState::OutOfSync {
            *count += span.len();
        }
    }
    Ok(out
        .into_iter()
        .map(|(node, slots)| (node, slots as f64 / measured_slots as f64 * 100.0))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorgEvent {
    pub node: NodeLabel,
    pub slot: Slot,
    /// Blocks dropped; `None` when the node did not report it.
    pub depth: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReorgGroupStats {
    pub group: String,
    pub count: u64,
    pub known_depths: u64,
    pub mean_depth: Option<f64>,
    /// Count minus the average count over all groups.
    pub delta_vs_average: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReorgSummary {
    pub total: u64,
    pub average_per_group: f64,
    pub groups: Vec<ReorgGroupStats>,
}

/// Reorg counts per group. `known_groups` adds groups with zero events to the average.
pub fn reorg_stats<'a>(
    events: impl IntoIterator<Item = &'a ReorgEvent>,
    group_by: GroupBy,
    known_groups: &[String],
) -> ReorgSummary {
    let mut groups: BTreeMap<String, (u64, u64, u64)> =
        known_groups.iter().map(|g| (g.clone(), (0, 0, 0))).collect();
    for e in events {
        let g = groups.entry(e.node.group(group_by).to_string()).or_default();
        g.0 += 1;
        if let Some(d) = e.depth {
            g.1 += 1;
            g.2 += d;
        }
    }
    let total: u64 = groups.values().map(|g| g.0).sum();
    let average = if groups.is_empty() {
        0.0
    } else {
        total as f64 / groups.len() as f64
    };
    ReorgSummary {
        total,
        average_per_group: average,
        groups: groups
            .into_iter()
            .map(|(group, (count, known, depth_sum))| ReorgGroupStats {
                group,
                count,
                known_depths: known,
                mean_depth: (known > 0).then(|| depth_sum as f64 / known as f64),
                delta_vs_average: count as f64 - average,
            })
            .collect(),
    }
}
