//! Block summaries as carried by candidate and canonical blocks.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::attestation::ClaimMatch;
use crate::chain::Root;
use crate::duties::ValidatorId;
use crate::labels::NodeLabel;
use crate::slot::Slot;

/// Committee participation bitfield, serialized as a string of `0`/`1`.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bits(pub Vec<bool>);

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Bits(vec![false; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn set(&mut self, i: usize) {
        self.0[i] = true;
    }

    pub fn get(&self, i: usize) -> bool {
        self.0.get(i).copied().unwrap_or(false)
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    pub fn union_with(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= *b;
        }
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bits({self})")
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(serde::de::Error::custom(format!("bad bit `{other}`"))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Bits)
    }
}

/// Aggregated votes of one committee sharing the same claims.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Aggregate {
    pub attested_slot: Slot,
    pub committee_index: u64,
    pub bits: Bits,
    /// Which claims agree with the canonical chain; timeliness is applied by the scorer.
    pub claims: ClaimMatch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub slot: Slot,
    pub proposer: ValidatorId,
    pub parent_root: Root,
    pub root: Root,
    pub aggregates: Vec<Aggregate>,
    pub sync_bits: u64,
    #[serde(default)]
    pub attester_slashings: u64,
    #[serde(default)]
    pub proposer_slashings: u64,
    pub source: NodeLabel,
}
