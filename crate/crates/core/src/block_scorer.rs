//! Synthetic block score: the proposer-visible value of a block with the base reward
//! factored out.
//!
//! A block's score is the weight of every attestation flag it includes for the first
//! time, plus its sync participation prorated over the committee size, plus a fixed
//! bonus per slashing. Flags already present in the [`InclusionIndex`] are worth nothing.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attestation::apply_timeliness;
use crate::block::BlockSummary;
use crate::duties::{CommitteeLookup, ValidatorId};
use crate::error::BlockError;
use crate::labels::NodeLabel;
use crate::rewards::RewardWeights;
use crate::scalar::Scalar;
use crate::slot::{Epoch, Slot};
use crate::spec::ChainSpec;

const SOURCE: u8 = 0b001;
const TARGET: u8 = 0b010;
const HEAD: u8 = 0b100;

/// Exact fraction used for tunable score constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub const fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn value<T: Scalar>(self) -> T {
        T::fraction(self.num, self.den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub weights: RewardWeights,
    pub slots_per_epoch: u64,
    pub source_window: u64,
    pub target_window: u64,
    pub sync_committee_size: u64,
    pub max_aggregations_per_block: u64,
    /// Default 1/16 score unit.
    pub attester_slashing_bonus: Fraction,
    /// Default 1/2 score unit, more than any single vote can contribute.
    pub proposer_slashing_bonus: Fraction,
}

impl ScoreParams {
    pub fn new(spec: &ChainSpec, weights: RewardWeights) -> Self {
        Self {
            weights,
            slots_per_epoch: spec.slots_per_epoch,
            source_window: spec.source_inclusion_window(),
            target_window: spec.target_inclusion_window(),
            sync_committee_size: spec.sync_committee_size,
            max_aggregations_per_block: spec.max_aggregations_per_block,
            attester_slashing_bonus: Fraction::new(1, 16),
            proposer_slashing_bonus: Fraction::new(1, 2),
        }
    }

    fn timeliness_spec(&self) -> ChainSpec {
        ChainSpec {
            slots_per_epoch: self.slots_per_epoch,
            ..ChainSpec::default()
        }
    }
}

/// Flags already included on chain, per `(epoch, validator)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionIndex {
    entries: BTreeMap<(Epoch, ValidatorId), u8>,
}

impl InclusionIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Included flags as `(source, target, head)`.
    pub fn flags(&self, epoch: Epoch, validator: ValidatorId) -> (bool, bool, bool) {
        let m = self.entries.get(&(epoch, validator)).copied().unwrap_or(0);
        (m & SOURCE != 0, m & TARGET != 0, m & HEAD != 0)
    }

    fn mask(&self, key: (Epoch, ValidatorId)) -> u8 {
        self.entries.get(&key).copied().unwrap_or(0)
    }

    /// Mark every timely flag carried by a canonical block as included, dropping epochs
    /// whose target window has closed. Applying the same block twice is a no-op.
    pub fn apply(
        &mut self,
        block: &BlockSummary,
        committees: &(impl CommitteeLookup + ?Sized),
        params: &ScoreParams,
    ) -> Result<(), BlockError> {
        let fresh = timely_masks(block, committees, params)?;
        for (key, mask) in fresh {
            *self.entries.entry(key).or_insert(0) |= mask;
        }
        // votes of epoch e stay includable until slot start(e+1) + target window
        self.entries
            .retain(|(epoch, _), _| (epoch.0 + 1) * params.slots_per_epoch + params.target_window > block.slot.0);
        Ok(())
    }
}

/// Timely flags per voter carried by a block, unioned across its aggregates.
fn timely_masks(
    block: &BlockSummary,
    committees: &(impl CommitteeLookup + ?Sized),
    params: &ScoreParams,
) -> Result<BTreeMap<(Epoch, ValidatorId), u8>, BlockError> {
    if block.aggregates.len() as u64 > params.max_aggregations_per_block {
        return Err(BlockError::TooManyAggregates {
            count: block.aggregates.len(),
            limit: params.max_aggregations_per_block,
        });
    }
    let tspec = params.timeliness_spec();
    let mut out: BTreeMap<(Epoch, ValidatorId), u8> = BTreeMap::new();
    for agg in &block.aggregates {
        if agg.attested_slot >= block.slot {
            return Err(BlockError::AttestedNotBeforeBlock {
                attested: agg.attested_slot,
                block: block.slot,
            });
        }
        let members = committees
            .committee(agg.attested_slot, agg.committee_index)
            .ok_or(BlockError::UnknownCommittee {
                slot: agg.attested_slot,
                index: agg.committee_index,
            })?;
        if members.len() != agg.bits.len() {
            return Err(BlockError::BitfieldLength {
                slot: agg.attested_slot,
                index: agg.committee_index,
                bits: agg.bits.len(),
                members: members.len(),
            });
        }
        let delay = block.slot.0 - agg.attested_slot.0;
        let flags = apply_timeliness(agg.claims, delay, &tspec);
        let mask = (flags.source as u8) * SOURCE | (flags.target as u8) * TARGET | (flags.head as u8) * HEAD;
        if mask == 0 {
            continue;
        }
        let epoch = Epoch(agg.attested_slot.0 / params.slots_per_epoch);
        for i in agg.bits.ones() {
            *out.entry((epoch, members[i])).or_insert(0) |= mask;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockScore<T> {
    /// Validators contributing at least one new flag.
    pub new_votes: u64,
    pub new_source: u64,
    pub new_target: u64,
    pub new_head: u64,
    pub sync_bits: u64,
    pub attester_slashings: u64,
    pub proposer_slashings: u64,
    pub score: T,
}

pub fn score_block<T: Scalar>(
    block: &BlockSummary,
    index: &InclusionIndex,
    committees: &(impl CommitteeLookup + ?Sized),
    params: &ScoreParams,
) -> Result<BlockScore<T>, BlockError> {
    if block.sync_bits > params.sync_committee_size {
        return Err(BlockError::SyncOverflow {
            bits: block.sync_bits,
            size: params.sync_committee_size,
        });
    }
    let fresh = timely_masks(block, committees, params)?;
    let (mut votes, mut src, mut tgt, mut head) = (0u64, 0u64, 0u64, 0u64);
    for (key, mask) in fresh {
        let new = mask & !index.mask(key);
        if new != 0 {
            votes += 1;
            src += (new & SOURCE != 0) as u64;
            tgt += (new & TARGET != 0) as u64;
            head += (new & HEAD != 0) as u64;
        }
    }
    let w = &params.weights;
    let denom = T::from_count(w.denominator);
    let flag_units = T::from_count(src * w.source + tgt * w.target + head * w.head) / denom;
    let sync_units = T::from_count(block.sync_bits * w.sync)
        / (denom * T::from_count(params.sync_committee_size));
    let slashing_units = params.attester_slashing_bonus.value::<T>() * T::from_count(block.attester_slashings)
        + params.proposer_slashing_bonus.value::<T>() * T::from_count(block.proposer_slashings);
    Ok(BlockScore {
        new_votes: votes,
        new_source: src,
        new_target: tgt,
        new_head: head,
        sync_bits: block.sync_bits,
        attester_slashings: block.attester_slashings,
        proposer_slashings: block.proposer_slashings,
        score: flag_units + sync_units + slashing_units,
    })
}

/// Functional form of [`InclusionIndex::apply`].
pub fn update_index(
    index: &InclusionIndex,
    canonical_block: &BlockSummary,
    committees: &(impl CommitteeLookup + ?Sized),
    params: &ScoreParams,
) -> Result<InclusionIndex, BlockError> {
    let mut next = index.clone();
    next.apply(canonical_block, committees, params)?;
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate<T> {
    pub rank: usize,
    pub source: NodeLabel,
    pub score: BlockScore<T>,
    /// Score over the best score of the slot; `None` when the best is zero.
    pub relative: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CandidateRanking<T> {
    /// Nobody produced a block; every polled node counts as out of sync for the slot.
    NoCandidates,
    Ranked(Vec<RankedCandidate<T>>),
}

/// Score all candidates of one slot against the same index snapshot and rank them:
/// score descending, then new votes descending, then node label ascending.
pub fn compare_candidates<T: Scalar>(
    slot: Slot,
    candidates: &[BlockSummary],
    index: &InclusionIndex,
    committees: &(impl CommitteeLookup + ?Sized),
    params: &ScoreParams,
) -> Result<CandidateRanking<T>, BlockError> {
    if candidates.is_empty() {
        return Ok(CandidateRanking::NoCandidates);
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.slot != slot {
            return Err(BlockError::SlotMismatch {
                expected: slot,
                found: c.slot,
            });
        }
        scored.push((c.source.clone(), score_block::<T>(c, index, committees, params)?));
    }
    scored.sort_by(|(la, a), (lb, b)| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(b.new_votes.cmp(&a.new_votes))
            .then_with(|| la.cmp(lb))
    });
    let best = scored[0].1.score;
    Ok(CandidateRanking::Ranked(
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (source, score))| RankedCandidate {
                rank: i + 1,
                relative: (best > T::zero()).then(|| (score.score / best).to_f64_lossy()),
                source,
                score,
            })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attestation::ClaimMatch;
    use crate::block::{Aggregate, Bits};
    use crate::chain::Root;
    use num_rational::Ratio;

    type Exact = Ratio<i64>;

    struct Fixed(Vec<ValidatorId>);

    impl CommitteeLookup for Fixed {
        fn committee(&self, _slot: Slot, index: u64) -> Option<&[ValidatorId]> {
            (index == 0).then_some(self.0.as_slice())
        }
    }

    fn params() -> ScoreParams {
        ScoreParams::new(&ChainSpec::default(), RewardWeights::default())
    }

    fn agg(slot: u64, bits: &[bool], claims: ClaimMatch) -> Aggregate {
        Aggregate {
            attested_slot: Slot(slot),
            committee_index: 0,
            bits: Bits(bits.to_vec()),
            claims,
        }
    }

    fn block(slot: u64, aggregates: Vec<Aggregate>) -> BlockSummary {
        BlockSummary {
            slot: Slot(slot),
            proposer: ValidatorId(0),
            parent_root: Root::ZERO,
            root: Root([slot as u8; 32]),
            aggregates,
            sync_bits: 0,
            attester_slashings: 0,
            proposer_slashings: 0,
            source: NodeLabel::new("n1", "here", "lh"),
        }
    }

    fn committee() -> Fixed {
        Fixed(vec![ValidatorId(10), ValidatorId(11), ValidatorId(12)])
    }

    #[test]
    fn empty_block_scores_zero() {
        let s: BlockScore<f64> = score_block(&block(5, vec![]), &InclusionIndex::new(), &committee(), &params()).unwrap();
        assert_eq!(s.score, 0.0);
        assert_eq!(s.new_votes, 0);
    }

    #[test]
    fn two_full_votes() {
        // oracle: 2 validators × (14 + 26 + 14) / 64
        let expected = Exact::new(2 * 54, 64);
        assert_eq!(expected, Exact::new(27, 16));
        let b = block(5, vec![agg(4, &[true, true, false], ClaimMatch::ALL)]);
        let s: BlockScore<Exact> = score_block(&b, &InclusionIndex::new(), &committee(), &params()).unwrap();
        assert_eq!(s.score, expected);
        let f: BlockScore<f64> = score_block(&b, &InclusionIndex::new(), &committee(), &params()).unwrap();
        assert_eq!(f.score, 1.6875);
        assert_eq!((f.new_votes, f.new_source, f.new_target, f.new_head), (2, 2, 2, 2));
    }

    #[test]
    fn duplicate_of_previous_block_only_counts_sync_and_slashings() {
        let p = params();
        let first = block(5, vec![agg(4, &[true, true, true], ClaimMatch::ALL)]);
        let index = update_index(&InclusionIndex::new(), &first, &committee(), &p).unwrap();
        let mut dup = block(6, first.aggregates.clone());
        dup.sync_bits = 256;
        dup.proposer_slashings = 1;
        let s: BlockScore<Exact> = score_block(&dup, &index, &committee(), &p).unwrap();
        assert_eq!(s.new_votes, 0);
        // 256 × 2 / (64 × 512) + 1/2
        assert_eq!(s.score, Exact::new(1, 64) + Exact::new(1, 2));
    }

    #[test]
    fn index_union_and_idempotence() {
        let p = params();
        let c = committee();
        let a = block(5, vec![agg(4, &[true, false, false], ClaimMatch { head: false, ..ClaimMatch::ALL })]);
        let once = update_index(&InclusionIndex::new(), &a, &c, &p).unwrap();
        let twice = update_index(&once, &a, &c, &p).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.flags(Epoch(0), ValidatorId(10)), (true, true, false));
        // later block adds head for the same voter: only possible within delay 1, so use slot 3's vote
        let b = block(6, vec![agg(5, &[false, true, false], ClaimMatch::ALL)]);
        let both = update_index(&once, &b, &c, &p).unwrap();
        assert_eq!(both.len(), 2);
        let a2 = block(4, vec![agg(3, &[true, false, false], ClaimMatch::ALL)]);
        let merged = update_index(&once, &a2, &c, &p).unwrap();
        assert_eq!(merged.flags(Epoch(0), ValidatorId(10)), (true, true, true));
    }

    #[test]
    fn validation_errors() {
        let p = params();
        let c = committee();
        let mut unknown = agg(4, &[true, true, true], ClaimMatch::ALL);
        unknown.committee_index = 3;
        let err = score_block::<f64>(&block(5, vec![unknown]), &InclusionIndex::new(), &c, &p).unwrap_err();
        assert!(matches!(err, BlockError::UnknownCommittee { .. }));
        let many = vec![agg(4, &[true, true, true], ClaimMatch::ALL); 129];
        let err = score_block::<f64>(&block(5, many), &InclusionIndex::new(), &c, &p).unwrap_err();
        assert!(matches!(err, BlockError::TooManyAggregates { count: 129, limit: 128 }));
        let err = score_block::<f64>(&block(5, vec![agg(5, &[true; 3], ClaimMatch::ALL)]), &InclusionIndex::new(), &c, &p)
            .unwrap_err();
        assert!(matches!(err, BlockError::AttestedNotBeforeBlock { .. }));
        let err = score_block::<f64>(&block(5, vec![agg(4, &[true; 2], ClaimMatch::ALL)]), &InclusionIndex::new(), &c, &p)
            .unwrap_err();
        assert!(matches!(err, BlockError::BitfieldLength { .. }));
    }

    #[test]
    fn stale_aggregates_earn_nothing() {
        let b = block(50, vec![agg(4, &[true; 3], ClaimMatch::ALL)]);
        let s: BlockScore<f64> = score_block(&b, &InclusionIndex::new(), &committee(), &params()).unwrap();
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn ranking() {
        let p = params();
        let c = committee();
        let idx = InclusionIndex::new();
        let only = compare_candidates::<f64>(Slot(5), &[block(5, vec![])], &idx, &c, &p).unwrap();
        match only {
            CandidateRanking::Ranked(r) => assert_eq!(r[0].rank, 1),
            _ => panic!(),
        }
        assert_eq!(
            compare_candidates::<f64>(Slot(5), &[], &idx, &c, &p).unwrap(),
            CandidateRanking::NoCandidates
        );
        let no_head = ClaimMatch { head: false, ..ClaimMatch::ALL };
        let mut weak = block(5, vec![agg(4, &[true, true, true], no_head)]);
        weak.source = NodeLabel::new("a", "x", "y");
        let mut strong = block(5, vec![agg(4, &[true, true, true], ClaimMatch::ALL)]);
        strong.source = NodeLabel::new("b", "x", "y");
        let CandidateRanking::Ranked(r) = compare_candidates::<f64>(Slot(5), &[weak, strong], &idx, &c, &p).unwrap() else {
            panic!()
        };
        assert_eq!(r[0].source.node_id, "b");
        assert_eq!(r[0].relative, Some(1.0));
        assert!(r[1].relative.unwrap() < 1.0);
        let err = compare_candidates::<f64>(Slot(6), &[block(5, vec![])], &idx, &c, &p).unwrap_err();
        assert!(matches!(err, BlockError::SlotMismatch { .. }));
    }

    #[test]
    fn equal_scores_tie_break_on_label() {
        let p = params();
        let mut a = block(5, vec![]);
        a.source = NodeLabel::new("zeta", "x", "y");
        let mut b = block(5, vec![]);
        b.source = NodeLabel::new("alpha", "x", "y");
        let CandidateRanking::Ranked(r) =
            compare_candidates::<f64>(Slot(5), &[a, b], &InclusionIndex::new(), &committee(), &p).unwrap()
        else {
            panic!()
        };
        assert_eq!(r[0].source.node_id, "alpha");
        assert_eq!(r[0].relative, None);
    }
}
