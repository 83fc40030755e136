//! Attestation flag evaluation.
//!
//! A vote earns the source flag when its source matches the justified checkpoint and
//! it is included within `isqrt(slots_per_epoch)` slots; target additionally needs the
//! epoch's first block and inclusion within one epoch; head additionally needs the
//! canonical block of the attested slot and an inclusion delay of exactly one.

use serde::{Deserialize, Serialize};

use crate::chain::{ChainView, Checkpoint, Root};
use crate::duties::ValidatorId;
use crate::error::{ChainError, ScoringError};
use crate::slot::Slot;
use crate::spec::ChainSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationRecord {
    pub validator: ValidatorId,
    pub attested_slot: Slot,
    pub claimed_source: Checkpoint,
    pub claimed_target: Checkpoint,
    pub claimed_head: Root,
    /// `None` when the vote never made it on chain.
    pub inclusion_slot: Option<Slot>,
}

/// Which claims of a vote agree with the canonical chain, before timeliness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClaimMatch {
    pub source: bool,
    pub target: bool,
    pub head: bool,
}

impl ClaimMatch {
    pub const ALL: ClaimMatch = ClaimMatch {
        source: true,
        target: true,
        head: true,
    };
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlagVector {
    pub source: bool,
    pub target: bool,
    pub head: bool,
    pub inclusion_delay: Option<u64>,
}

impl FlagVector {
    pub const MISSED: FlagVector = FlagVector {
        source: false,
        target: false,
        head: false,
        inclusion_delay: None,
    };

    /// head ⇒ target ⇒ source, and head ⇒ delay 1.
    pub fn is_consistent(&self) -> bool {
        (!self.head || self.target)
            && (!self.target || self.source)
            && (!self.head || self.inclusion_delay == Some(1))
            && (self.inclusion_delay.is_some() || !self.source)
    }

    pub fn count(&self) -> u32 {
        self.source as u32 + self.target as u32 + self.head as u32
    }
}

/// Compare a vote's claims with the canonical view.
pub fn match_claims(
    att: &AttestationRecord,
    view: &ChainView,
    spec: &ChainSpec,
) -> Result<ClaimMatch, ChainError> {
    let slot = att.attested_slot;
    if slot.0 >= view.len() {
        return Err(ChainError::NotCovered {
            slot,
            covered: view.len(),
        });
    }
    let source = att.claimed_source == view.justified(slot);
    let target = source && att.claimed_target == view.target(slot.epoch(spec));
    let head = target && att.claimed_head == view.canonical_head(slot);
    Ok(ClaimMatch {
        source,
        target,
        head,
    })
}

/// Flags earned by matching claims included `delay` slots after the attested slot.
pub fn apply_timeliness(claims: ClaimMatch, delay: u64, spec: &ChainSpec) -> FlagVector {
    let source = claims.source && delay >= 1 && delay <= spec.source_inclusion_window();
    let target = source && claims.target && delay <= spec.target_inclusion_window();
    let head = target && claims.head && delay == 1;
    FlagVector {
        source,
        target,
        head,
        inclusion_delay: Some(delay),
    }
}

pub fn evaluate_attestation(
    att: &AttestationRecord,
    view: &ChainView,
    spec: &ChainSpec,
) -> Result<FlagVector, ScoringError> {
    let Some(inclusion) = att.inclusion_slot else {
        return Ok(FlagVector::MISSED);
    };
    if inclusion <= att.attested_slot {
        return Err(ScoringError::InclusionNotAfterAttestation {
            attested: att.attested_slot,
            inclusion,
        });
    }
    if inclusion.0 >= view.len() {
        return Err(ChainError::NotCovered {
            slot: inclusion,
            covered: view.len(),
        }
        .into());
    }
    let claims = match_claims(att, view, spec)?;
    Ok(apply_timeliness(claims, inclusion.0 - att.attested_slot.0, spec))
}
