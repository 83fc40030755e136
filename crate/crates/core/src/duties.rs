//! Duty assignment: attestation committees, proposers, aggregators and sync committees.
//!
//! Committees come from a seeded permutation keyed by `seed ‖ domain ‖ epoch`, split
//! into `slots_per_epoch × committees_per_slot` contiguous chunks.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::slot::{Epoch, Slot};
use crate::spec::ChainSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatorId(pub u64);

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One validator's duties for one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DutyAssignment {
    pub validator: ValidatorId,
    pub attestation_slot: Slot,
    pub committee_index: u64,
    /// Position inside the committee, i.e. the bit in aggregate bitfields.
    pub committee_position: usize,
    pub is_aggregator: bool,
    pub proposer_slots: Vec<Slot>,
    pub sync_member_periods: Vec<u64>,
}

impl DutyAssignment {
    pub fn is_sync_member_in(&self, epoch: Epoch, spec: &ChainSpec) -> bool {
        self.sync_member_periods.contains(&epoch.sync_period(spec))
    }
}

/// Lookup of committee membership by `(slot, committee index)`.
pub trait CommitteeLookup {
    fn committee(&self, slot: Slot, index: u64) -> Option<&[ValidatorId]>;
}

/// All duties of one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochDuties {
    pub epoch: Epoch,
    pub committees_per_slot: u64,
    pub aggregators_per_committee: u64,
    first_slot: Slot,
    committees: Vec<Vec<Vec<ValidatorId>>>,
    proposers: Vec<ValidatorId>,
    sync_committee: Vec<ValidatorId>,
    sync_period: u64,
}

fn keyed_rng(seed: &[u8; 32], domain: &[u8], index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed);
    hasher.update(domain);
    hasher.update(index.to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

fn permutation(validators: u64, rng: &mut ChaCha8Rng) -> Vec<ValidatorId> {
    let mut ids: Vec<ValidatorId> = (0..validators).map(ValidatorId).collect();
    ids.shuffle(rng);
    ids
}

/// Members of the sync committee for `period`, at most `sync_committee_size`.
pub fn sync_committee(validators: u64, period: u64, seed: &[u8; 32], spec: &ChainSpec) -> Vec<ValidatorId> {
    let mut rng = keyed_rng(seed, b"sync", period);
    let mut ids = permutation(validators, &mut rng);
    ids.truncate(spec.sync_committee_size as usize);
    ids
}

pub fn assign_duties(validators: u64, epoch: Epoch, seed: &[u8; 32], spec: &ChainSpec) -> EpochDuties {
    assert!(validators >= 1, "duty assignment needs at least one validator");
    let per_slot = spec.committees_per_slot(validators);
    let total = spec.slots_per_epoch * per_slot;

    let mut rng = keyed_rng(seed, b"committee", epoch.0);
    let shuffled = permutation(validators, &mut rng);
    let n = validators;
    let committees = (0..spec.slots_per_epoch)
        .map(|s| {
            (0..per_slot)
                .map(|c| {
                    let k = s * per_slot + c;
                    let lo = (n * k / total) as usize;
                    let hi = (n * (k + 1) / total) as usize;
                    shuffled[lo..hi].to_vec()
                })
                .collect()
        })
        .collect();

    let mut rng = keyed_rng(seed, b"proposer", epoch.0);
    let proposers = (0..spec.slots_per_epoch)
        .map(|_| ValidatorId(rng.random_range(0..validators)))
        .collect();

    let sync_period = epoch.sync_period(spec);
    EpochDuties {
        epoch,
        committees_per_slot: per_slot,
        aggregators_per_committee: spec.aggregators_per_committee,
        first_slot: epoch.start_slot(spec),
        committees,
        proposers,
        sync_committee: sync_committee(validators, sync_period, seed, spec),
        sync_period,
    }
}

impl EpochDuties {
    fn slot_index(&self, slot: Slot) -> Option<usize> {
        let i = slot.0.checked_sub(self.first_slot.0)? as usize;
        (i < self.proposers.len()).then_some(i)
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        (0..self.proposers.len() as u64).map(|i| Slot(self.first_slot.0 + i))
    }

    pub fn proposer(&self, slot: Slot) -> Option<ValidatorId> {
        self.slot_index(slot).map(|i| self.proposers[i])
    }

    pub fn committees_at(&self, slot: Slot) -> &[Vec<ValidatorId>] {
        self.slot_index(slot)
            .map_or(&[][..], |i| self.committees[i].as_slice())
    }

    /// Aggregators are the leading members of each (already shuffled) committee.
    pub fn aggregators(&self, slot: Slot, index: u64) -> &[ValidatorId] {
        self.committee(slot, index).map_or(&[][..], |c| {
            &c[..c.len().min(self.aggregators_per_committee as usize)]
        })
    }

    pub fn sync_committee(&self) -> &[ValidatorId] {
        &self.sync_committee
    }

    pub fn is_sync_member(&self, v: ValidatorId) -> bool {
        self.sync_committee.contains(&v)
    }

    /// Per-validator view of the epoch, sorted by validator id.
    pub fn assignments(&self) -> Vec<DutyAssignment> {
        let sync: BTreeSet<ValidatorId> = self.sync_committee.iter().copied().collect();
        let mut out = Vec::new();
        for slot in self.slots() {
            for (ci, members) in self.committees_at(slot).iter().enumerate() {
                let aggregators = self.aggregators(slot, ci as u64).len();
                for (pos, &v) in members.iter().enumerate() {
                    out.push(DutyAssignment {
                        validator: v,
                        attestation_slot: slot,
                        committee_index: ci as u64,
                        committee_position: pos,
                        is_aggregator: pos < aggregators,
                        proposer_slots: self
                            .slots()
                            .filter(|&s| self.proposer(s) == Some(v))
                            .collect(),
                        sync_member_periods: if sync.contains(&v) {
                            vec![self.sync_period]
                        } else {
                            Vec::new()
                        },
                    });
                }
            }
        }
        out.sort_by_key(|a| a.validator);
        out
    }
}

impl CommitteeLookup for EpochDuties {
    fn committee(&self, slot: Slot, index: u64) -> Option<&[ValidatorId]> {
        self.committees_at(slot)
            .get(index as usize)
            .map(|c| c.as_slice())
    }
}

impl<T: CommitteeLookup> CommitteeLookup for [T] {
    fn committee(&self, slot: Slot, index: u64) -> Option<&[ValidatorId]> {
        self.iter().find_map(|d| d.committee(slot, index))
    }
}

impl<T: CommitteeLookup> CommitteeLookup for Vec<T> {
    fn committee(&self, slot: Slot, index: u64) -> Option<&[ValidatorId]> {
        self.as_slice().committee(slot, index)
    }
}

impl<K: Ord, T: CommitteeLookup> CommitteeLookup for std::collections::BTreeMap<K, T> {
    fn committee(&self, slot: Slot, index: u64) -> Option<&[ValidatorId]> {
        self.values().find_map(|d| d.committee(slot, index))
    }
}
