//! Chain views: canonical and node-local.
//!
//! A [`ChainView`] holds one entry per slot, either a block or an explicit
//! empty marker. Every block records the instant (ms since genesis) from which
//! the holder of the view could see it. The canonical view marks each block
//! visible at its slot start; a node-local view uses the node's processing
//! time, which is how late arrivals turn into wrong head or target claims.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ChainError;
use crate::slot::{Epoch, Slot};
use crate::spec::ChainSpec;

/// Opaque 32-byte block identifier.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Root(pub [u8; 32]);

impl Root {
    pub const ZERO: Root = Root([0; 32]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0; 32]
    }
}

impl fmt::Debug for Root {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Root({self})")
    }
}

impl fmt::Display for Root {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid root: {0}")]
pub struct ParseRootError(String);

impl FromStr for Root {
    type Err = ParseRootError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("0x").unwrap_or(s);
        let mut out = [0u8; 32];
        hex::decode_to_slice(digits, &mut out).map_err(|e| ParseRootError(e.to_string()))?;
        Ok(Root(out))
    }
}

impl Serialize for Root {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Root {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: Epoch,
    pub root: Root,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub root: Root,
    pub parent: Root,
    /// Milliseconds since genesis at which the block became visible; `None` if never.
    pub visible_ms: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotEntry {
    Empty,
    Block(BlockEntry),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainView {
    genesis_root: Root,
    slots_per_epoch: u64,
    ms_per_slot: u64,
    entries: Vec<SlotEntry>,
}

impl ChainView {
    pub fn new(genesis_root: Root, spec: &ChainSpec) -> Self {
        Self {
            genesis_root,
            slots_per_epoch: spec.slots_per_epoch,
            ms_per_slot: spec.ms_per_slot(),
            entries: Vec::new(),
        }
    }

    pub fn genesis_root(&self) -> Root {
        self.genesis_root
    }

    pub fn genesis_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch: Epoch(0),
            root: self.genesis_root,
        }
    }

    /// Number of slots covered, starting at slot 0.
    pub fn len(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Root of the latest block in the view, or the genesis root.
    pub fn tip_root(&self) -> Root {
        self.entries
            .iter()
            .rev()
            .find_map(|e| match e {
                SlotEntry::Block(b) => Some(b.root),
                SlotEntry::Empty => None,
            })
            .unwrap_or(self.genesis_root)
    }

    /// Append a canonical block, visible from its slot start.
    pub fn push_block(&mut self, root: Root) -> Slot {
        let slot = Slot(self.len());
        let visible = slot.0 * self.ms_per_slot;
        self.push_block_visible(root, Some(visible))
    }

    pub fn push_block_visible(&mut self, root: Root, visible_ms: Option<u64>) -> Slot {
        let parent = self.tip_root();
        self.entries.push(SlotEntry::Block(BlockEntry {
            root,
            parent,
            visible_ms,
        }));
        Slot(self.len() - 1)
    }

    pub fn push_empty(&mut self) -> Slot {
        self.entries.push(SlotEntry::Empty);
        Slot(self.len() - 1)
    }

    /// Mark the block at `slot` visible from `ms`. No-op on empty slots.
    pub fn set_visible(&mut self, slot: Slot, ms: Option<u64>) {
        if let Some(SlotEntry::Block(b)) = self.entries.get_mut(slot.0 as usize) {
            b.visible_ms = ms;
        }
    }

    pub fn entry(&self, slot: Slot) -> Option<&SlotEntry> {
        self.entries.get(slot.0 as usize)
    }

    pub fn block(&self, slot: Slot) -> Option<&BlockEntry> {
        match self.entry(slot) {
            Some(SlotEntry::Block(b)) => Some(b),
            _ => None,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (Slot, &SlotEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (Slot(i as u64), e))
    }

    /// Latest root visible at `offset_ms` into `slot` (offset may be negative).
    pub fn head_at(&self, slot: Slot, offset_ms: i64) -> Result<Root, ChainError> {
        let t = (slot.0 * self.ms_per_slot) as i64 + offset_ms;
        if t < 0 {
            return Err(ChainError::BeforeGenesis(t));
        }
        if slot.0 >= self.len() {
            return Err(ChainError::NotCovered {
                slot,
                covered: self.len(),
            });
        }
        Ok(self.head_at_time(t as u64))
    }

    pub fn head_at_time(&self, t_ms: u64) -> Root {
        self.head_slot_at_time(t_ms)
            .and_then(|s| self.block(s))
            .map_or(self.genesis_root, |b| b.root)
    }

    /// Slot of the latest block visible at `t_ms`, if any.
    pub fn head_slot_at_time(&self, t_ms: u64) -> Option<Slot> {
        let last = (t_ms / self.ms_per_slot).min(self.len().saturating_sub(1));
        if self.is_empty() {
            return None;
        }
        (0..=last).rev().map(Slot).find(|&s| {
            self.block(s)
                .is_some_and(|b| b.visible_ms.is_some_and(|v| v <= t_ms))
        })
    }

    fn visible(entry: &BlockEntry, as_of: Option<u64>) -> bool {
        match as_of {
            None => true,
            Some(t) => entry.visible_ms.is_some_and(|v| v <= t),
        }
    }

    /// Target checkpoint of `epoch`: the first block of the epoch, as known at `as_of`
    /// (`None` means full knowledge). If the epoch has no visible block, falls back to the
    /// latest visible block before it, then to genesis.
    pub fn target_at(&self, epoch: Epoch, as_of: Option<u64>) -> Checkpoint {
        let start = epoch.0 * self.slots_per_epoch;
        let end = (start + self.slots_per_epoch).min(self.len());
        let in_epoch = (start..end)
            .filter_map(|s| self.block(Slot(s)))
            .find(|b| Self::visible(b, as_of));
        let root = in_epoch
            .or_else(|| {
                (0..start.min(self.len()))
                    .rev()
                    .filter_map(|s| self.block(Slot(s)))
                    .find(|b| Self::visible(b, as_of))
            })
            .map_or(self.genesis_root, |b| b.root);
        Checkpoint { epoch, root }
    }

    pub fn target(&self, epoch: Epoch) -> Checkpoint {
        self.target_at(epoch, None)
    }

    /// Justified checkpoint for votes at `slot`: the previous epoch's target, or genesis
    /// during epoch 0.
    pub fn justified_at(&self, slot: Slot, as_of: Option<u64>) -> Checkpoint {
        let epoch = slot.0 / self.slots_per_epoch;
        if epoch == 0 {
            self.genesis_checkpoint()
        } else {
            self.target_at(Epoch(epoch - 1), as_of)
        }
    }

    pub fn justified(&self, slot: Slot) -> Checkpoint {
        self.justified_at(slot, None)
    }

    /// Canonical head of `slot`: its own block or the most recent prior root.
    pub fn canonical_head(&self, slot: Slot) -> Root {
        (0..=slot.0.min(self.len().saturating_sub(1)))
            .rev()
            .find_map(|s| self.block(Slot(s)).map(|b| b.root))
            .unwrap_or(self.genesis_root)
    }
}
