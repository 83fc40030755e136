use thiserror::Error;

use crate::slot::Slot;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpecError {
    #[error("deadlines must satisfy 0 < {attestation} < {aggregation} < {slot} seconds")]
    Deadlines {
        attestation: u64,
        aggregation: u64,
        slot: u64,
    },
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("unknown chain spec key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("query at {0} ms is before genesis")]
    BeforeGenesis(i64),
    #[error("slot {slot} is beyond the view (covers {covered} slots)")]
    NotCovered { slot: Slot, covered: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoringError {
    #[error("malformed attestation: inclusion slot {inclusion} is not after attested slot {attested}")]
    InclusionNotAfterAttestation { attested: Slot, inclusion: Slot },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("no performance records to aggregate")]
    EmptyInput,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlockError {
    #[error("block carries {count} aggregates, limit is {limit}")]
    TooManyAggregates { count: usize, limit: u64 },
    #[error("aggregate references unknown committee {index} at slot {slot}")]
    UnknownCommittee { slot: Slot, index: u64 },
    #[error("aggregate for committee {index} at slot {slot} has {bits} bits, committee has {members}")]
    BitfieldLength {
        slot: Slot,
        index: u64,
        bits: usize,
        members: usize,
    },
    #[error("aggregate attests slot {attested}, not before block slot {block}")]
    AttestedNotBeforeBlock { attested: Slot, block: Slot },
    #[error("sync participation {bits} exceeds committee size {size}")]
    SyncOverflow { bits: u64, size: u64 },
    #[error("candidate for slot {found} in a comparison for slot {expected}")]
    SlotMismatch { expected: Slot, found: Slot },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TelemetryError {
    #[error("event for slot {slot} received {early_ms} ms before slot start (tolerance {tolerance_ms} ms)")]
    ClockSkew {
        slot: Slot,
        early_ms: i64,
        tolerance_ms: u64,
    },
    #[error("no records in group")]
    Empty,
    #[error("measurement window has zero slots")]
    ZeroSlots,
}
