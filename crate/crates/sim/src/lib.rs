//! Deterministic discrete-event simulation of a multi-region beacon network.
//!
//! [`run`] plays proposers, attesters, aggregators and sync committee members on the
//! slot-phase schedule over per-region lognormal latencies and per-node processing
//! delays. It returns each node's event stream plus a [`GroundTruth`] log holding the
//! canonical chain, every node's local view, every message's timings and every duty
//! outcome, for use as an oracle by the measurement pipeline.

pub mod config;
mod engine;
pub mod truth;

pub use config::{
    inject_fault, BlockDelay, ConfigError, Fault, FaultKind, LatencyRule, NodeConfig, RegionProfile, SimConfig,
};
pub use engine::{genesis_root, run, seed_bytes};
pub use truth::{
    emergent_reorgs, AttestationOutcome, CandidateOutcome, CandidateResult, GroundTruth, MessageKind, MessageTrace,
    NodeEvent, NodeStream, RunOutput, StreamItem, StreamStats, Unavailable,
};

/// Four-location preset calibrated to illustrative arrival medians.
pub const FOUR_REGIONS: &str = include_str!("../../../presets/four-regions.cfg");
