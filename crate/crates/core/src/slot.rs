//! Slot and epoch arithmetic.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::spec::ChainSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Slot(pub u64);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Epoch(pub u64);

impl Slot {
    pub fn epoch(self, spec: &ChainSpec) -> Epoch {
        epoch_of(self, spec)
    }

    pub fn index_in_epoch(self, spec: &ChainSpec) -> u64 {
        self.0 % spec.slots_per_epoch
    }

    /// Milliseconds from genesis to the start of this slot.
    pub fn start_ms(self, spec: &ChainSpec) -> u64 {
        self.0 * spec.ms_per_slot()
    }

    pub fn next(self) -> Slot {
        Slot(self.0 + 1)
    }
}

impl Epoch {
    pub fn start_slot(self, spec: &ChainSpec) -> Slot {
        Slot(self.0 * spec.slots_per_epoch)
    }

    pub fn slots(self, spec: &ChainSpec) -> impl Iterator<Item = Slot> {
        let start = self.0 * spec.slots_per_epoch;
        (start..start + spec.slots_per_epoch).map(Slot)
    }

    pub fn sync_period(self, spec: &ChainSpec) -> u64 {
        self.0 / spec.sync_committee_period_epochs
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn epoch_of(slot: Slot, spec: &ChainSpec) -> Epoch {
    Epoch(slot.0 / spec.slots_per_epoch)
}

/// Wall-clock phase boundaries of one slot, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotTimes {
    pub start: u64,
    pub attestation_deadline: u64,
    pub aggregation_deadline: u64,
    pub end: u64,
}

pub fn slot_wall_times(slot: Slot, spec: &ChainSpec) -> SlotTimes {
    let start = spec.genesis_time + slot.0 * spec.seconds_per_slot;
    SlotTimes {
        start,
        attestation_deadline: start + spec.attestation_deadline_s,
        aggregation_deadline: start + spec.aggregation_deadline_s,
        end: start + spec.seconds_per_slot,
    }
}
