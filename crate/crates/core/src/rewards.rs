//! Flag-based reward model and the maximum extractable reward (MER).
//!
//! MER counts a perfect attestation plus, for sync committee members, a sync reward
//! for every slot of the epoch. Proposer income is deliberately left out: proposer
//! selection is random, so it would make MER-relative ratios depend on luck.

use serde::{Deserialize, Serialize};

use crate::attestation::FlagVector;
use crate::duties::{DutyAssignment, ValidatorId};
use crate::labels::NodeLabel;
use crate::scalar::Scalar;
use crate::slot::Epoch;
use crate::spec::ChainSpec;

/// Integer reward weights over a common denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub source: u64,
    pub target: u64,
    pub head: u64,
    pub sync: u64,
    pub proposer: u64,
    pub denominator: u64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            source: 14,
            target: 26,
            head: 14,
            sync: 2,
            proposer: 8,
            denominator: 64,
        }
    }
}

impl RewardWeights {
    pub const ZERO: RewardWeights = RewardWeights {
        source: 0,
        target: 0,
        head: 0,
        sync: 0,
        proposer: 0,
        denominator: 64,
    };

    /// Checks the ordering the reward model relies on: target is the most valuable flag.
    pub fn validate(&self) -> Result<(), String> {
        if self.denominator == 0 {
            return Err("weight denominator must be positive".into());
        }
        if !(self.target > self.head && self.target > self.source) {
            return Err(format!(
                "target weight {} must exceed source {} and head {}",
                self.target, self.source, self.head
            ));
        }
        Ok(())
    }

    pub fn attestation_total(&self) -> u64 {
        self.source + self.target + self.head
    }

    /// Sum of weights of the flags set in `flags`.
    pub fn flag_weight(&self, flags: &FlagVector) -> u64 {
        self.source * flags.source as u64 + self.target * flags.target as u64 + self.head * flags.head as u64
    }
}

pub fn attestation_reward<T: Scalar>(flags: &FlagVector, weights: &RewardWeights, base: T) -> T {
    base * T::from_count(weights.flag_weight(flags)) / T::from_count(weights.denominator)
}

/// Reward of one sync committee member for one signed slot.
pub fn sync_slot_reward<T: Scalar>(weights: &RewardWeights, base: T) -> T {
    base * T::from_count(weights.sync) / T::from_count(weights.denominator)
}

pub fn max_epoch_reward<T: Scalar>(
    assignment: &DutyAssignment,
    weights: &RewardWeights,
    base: T,
    spec: &ChainSpec,
) -> T {
    let perfect = FlagVector {
        source: true,
        target: true,
        head: true,
        inclusion_delay: Some(1),
    };
    let attest = attestation_reward(&perfect, weights, base);
    let epoch = assignment.attestation_slot.epoch(spec);
    if assignment.is_sync_member_in(epoch, spec) {
        attest + sync_slot_reward(weights, base) * T::from_count(spec.slots_per_epoch)
    } else {
        attest
    }
}

/// Outcome of one validator over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochPerformance<T> {
    pub validator: ValidatorId,
    pub epoch: Epoch,
    pub node: NodeLabel,
    pub achieved_reward: T,
    pub mer: T,
    pub flags: FlagVector,
    pub proposals_assigned: u64,
    pub proposals_fulfilled: u64,
    pub sync_slots_assigned: u64,
    pub sync_slots_signed: u64,
}

impl<T: Scalar> EpochPerformance<T> {
    /// Build from duties and observed outcomes; achieved = attestation + signed sync slots.
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        assignment: &DutyAssignment,
        node: NodeLabel,
        flags: FlagVector,
        proposals_fulfilled: u64,
        sync_slots_signed: u64,
        weights: &RewardWeights,
        base: T,
        spec: &ChainSpec,
    ) -> Self {
        let epoch = assignment.attestation_slot.epoch(spec);
        let sync_slots_assigned = if assignment.is_sync_member_in(epoch, spec) {
            spec.slots_per_epoch
        } else {
            0
        };
        let signed = sync_slots_signed.min(sync_slots_assigned);
        let achieved = attestation_reward(&flags, weights, base)
            + sync_slot_reward(weights, base) * T::from_count(signed);
        Self {
            validator: assignment.validator,
            epoch,
            node,
            achieved_reward: achieved,
            mer: max_epoch_reward(assignment, weights, base, spec),
            flags,
            proposals_assigned: assignment.proposer_slots.len() as u64,
            proposals_fulfilled,
            sync_slots_assigned,
            sync_slots_signed: signed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slot::Slot;
    use num_rational::Ratio;

    type Exact = Ratio<i64>;

    fn flags(s: bool, t: bool, h: bool) -> FlagVector {
        FlagVector {
            source: s,
            target: t,
            head: h,
            inclusion_delay: Some(1),
        }
    }

    /// Independent weight-sum oracle: reward = base * Σw / W with plain integers.
    fn oracle(s: bool, t: bool, h: bool, base: i64) -> i64 {
        let sum = [(s, 14), (t, 26), (h, 14)]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, w)| w)
            .sum::<i64>();
        base * sum / 64
    }

    #[test]
    fn attestation_reward_examples() {
        let w = RewardWeights::default();
        assert_eq!(oracle(true, true, true, 64), 54);
        assert_eq!(oracle(true, true, false, 64), 40);
        assert_eq!(attestation_reward(&flags(true, true, true), &w, 64.0), 54.0);
        assert_eq!(attestation_reward(&FlagVector::MISSED, &w, 64.0), 0.0);
        assert_eq!(attestation_reward(&flags(true, true, false), &w, Exact::from(64)), Exact::from(40));
        for mask in 0..8u8 {
            let (s, t, h) = (mask & 1 != 0, mask & 2 != 0, mask & 4 != 0);
            assert_eq!(
                attestation_reward(&flags(s, t, h), &w, Exact::from(64)),
                Exact::from(oracle(s, t, h, 64))
            );
        }
    }

    #[test]
    fn target_miss_costs_more_than_head_miss() {
        let w = RewardWeights::default();
        w.validate().unwrap();
        let full = attestation_reward(&flags(true, true, true), &w, 64.0);
        let no_target = attestation_reward(&flags(true, false, true), &w, 64.0);
        let no_head = attestation_reward(&flags(true, true, false), &w, 64.0);
        assert!(full - no_target > full - no_head);
    }

    fn assignment(sync: bool) -> DutyAssignment {
        DutyAssignment {
            validator: ValidatorId(3),
            attestation_slot: Slot(40),
            committee_index: 0,
            committee_position: 0,
            is_aggregator: false,
            proposer_slots: vec![],
            sync_member_periods: if sync { vec![0] } else { vec![] },
        }
    }

    #[test]
    fn mer_examples() {
        let spec = ChainSpec::default();
        let w = RewardWeights::default();
        assert_eq!(max_epoch_reward(&assignment(false), &w, 64.0, &spec), 54.0);
        // 54 + 32 × (2/64) × 64
        assert_eq!(max_epoch_reward(&assignment(true), &w, Exact::from(64), &spec), Exact::from(118));
        assert_eq!(max_epoch_reward(&assignment(true), &RewardWeights::ZERO, 64.0, &spec), 0.0);
    }

    #[test]
    fn performance_achieved_bounded_by_mer() {
        let spec = ChainSpec::default();
        let w = RewardWeights::default();
        let p = EpochPerformance::compute(
            &assignment(true),
            NodeLabel::default(),
            flags(true, true, true),
            0,
            99,
            &w,
            64.0,
            &spec,
        );
        assert_eq!(p.sync_slots_signed, 32);
        assert_eq!(p.achieved_reward, p.mer);
        assert_eq!(p.epoch, Epoch(1));
    }

    #[test]
    fn weight_validation() {
        assert!(RewardWeights::ZERO.validate().is_err());
        let w = RewardWeights {
            head: 30,
            ..RewardWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
