//! Core model for consensus-layer performance measurement.
//!
//! - [`spec`], [`slot`], [`chain`], [`duties`]: protocol constants, slot timing,
//!   canonical and node-local chain views, committee and proposer assignment.
//! - [`attestation`], [`rewards`], [`stats`]: flag evaluation, rewards against the
//!   maximum extractable reward, and per-location/client aggregation.
//! - [`block`], [`block_scorer`]: synthetic block scores from newly included votes.
//! - [`telemetry`]: arrival offsets, latency CDFs, sync spans and reorg counts.
//!
//! Reward arithmetic is generic over [`Scalar`]; [`Reward`] is the `f64` used by the
//! record pipeline and [`ExactReward`] the rational type used for oracle checks.

pub mod attestation;
pub mod block;
pub mod block_scorer;
pub mod chain;
pub mod duties;
pub mod error;
pub mod labels;
pub mod rewards;
pub mod scalar;
pub mod slot;
pub mod spec;
pub mod stats;
pub mod telemetry;

pub use attestation::{apply_timeliness, evaluate_attestation, match_claims, AttestationRecord, ClaimMatch, FlagVector};
pub use block::{Aggregate, Bits, BlockSummary};
pub use block_scorer::{
    compare_candidates, score_block, update_index, BlockScore, CandidateRanking, InclusionIndex, RankedCandidate,
    ScoreParams,
};
pub use chain::{BlockEntry, ChainView, Checkpoint, Root, SlotEntry};
pub use duties::{assign_duties, sync_committee, CommitteeLookup, DutyAssignment, EpochDuties, ValidatorId};
pub use error::{BlockError, ChainError, ScoringError, SpecError, TelemetryError};
pub use labels::{GroupBy, NodeLabel};
pub use rewards::{attestation_reward, max_epoch_reward, sync_slot_reward, EpochPerformance, RewardWeights};
pub use scalar::Scalar;
pub use slot::{epoch_of, slot_wall_times, Epoch, Slot, SlotTimes};
pub use spec::ChainSpec;
pub use stats::{aggregate_stats, StatRow};
pub use telemetry::{
    latency_cdf, out_of_sync_ratio, record_arrival, reorg_stats, ArrivalRecord, EventKind, LatencyCdf,
    ObservedEvent, ReorgEvent, SlotClock, SyncSpan, SyncState,
};

/// Reward units as persisted by the record pipeline.
pub type Reward = f64;
/// Exact reward units for oracle comparisons.
pub type ExactReward = num_rational::Ratio<i64>;

pub type Performance = EpochPerformance<Reward>;
pub type ExactPerformance = EpochPerformance<ExactReward>;
pub type Score = BlockScore<Reward>;
pub type ExactScore = BlockScore<ExactReward>;
