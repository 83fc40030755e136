//! Scenario configuration.
//!
//! Scenarios are TOML documents:
//!
//! ```toml
//! seed = 7
//! duration_slots = 320
//! validators = 500
//!
//! [spec]                  # optional ChainSpec overrides
//! seconds_per_slot = 12
//!
//! [[region]]
//! name = "helsinki"
//! peer_count = 80         # processing cost scales with peer_count / 50
//! processing_ms = 15
//! jitter_ms = 10
//!
//! [[latency]]             # directed; "*" matches any region
//! from = "*"
//! to = "helsinki"
//! median_ms = 1440
//! sigma = 0.45
//! shift_ms = 0
//!
//! [[node]]
//! id = "hel-lh"
//! region = "helsinki"
//! client = "lighthouse"
//!
//! [[fault]]
//! node = "hel-lh"
//! kind = "node_down"      # node_down | clock_skew | stream_drop
//! first_slot = 40
//! last_slot = 49
//!
//! [[block_delay]]         # extra latency on one slot's block, all recipients
//! slot = 64
//! extra_ms = 5000
//! ```

use std::collections::BTreeSet;

use clperf_core::{ChainSpec, NodeLabel, SpecError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("scenario syntax: {0}")]
    Syntax(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("duration of {duration} slots is shorter than one epoch ({epoch} slots)")]
    DurationTooShort { duration: u64, epoch: u64 },
    #[error("scenario needs at least one node and one validator")]
    Empty,
    #[error("duplicate {what} `{name}`")]
    Duplicate { what: &'static str, name: String },
    #[error("node `{node}` references unknown region `{region}`")]
    UnknownRegion { node: String, region: String },
    #[error("latency rule references unknown region `{0}`")]
    UnknownLatencyRegion(String),
    #[error("fault references unknown node `{0}`")]
    UnknownNode(String),
    #[error("fault window {first}..={last} is outside the {duration}-slot run")]
    WindowOutsideRun { first: u64, last: u64, duration: u64 },
    #[error("overlapping {kind} faults on node `{node}`")]
    OverlappingFault { node: String, kind: FaultKind },
    #[error("block delay at slot {0} is outside the run")]
    DelayOutsideRun(u64),
    #[error("validator counts per node sum to {assigned}, expected {expected}")]
    ValidatorSplit { assigned: u64, expected: u64 },
    #[error("invalid value: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionProfile {
    pub name: String,
    #[serde(default = "default_peers")]
    pub peer_count: u32,
    /// Per-message processing cost before the peer-count multiplier.
    #[serde(default)]
    pub processing_ms: f64,
    /// Upper bound of the uniform per-message jitter added to `processing_ms`.
    #[serde(default)]
    pub jitter_ms: f64,
}

fn default_peers() -> u32 {
    50
}

/// Lognormal one-way latency `shift + median · exp(sigma · z)`, `z ~ N(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyRule {
    pub from: String,
    pub to: String,
    pub median_ms: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub shift_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub region: String,
    pub client: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processing_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_ms: Option<f64>,
    /// Delay before the node answers a block production request.
    #[serde(default)]
    pub api_delay_ms: u64,
    /// Validators hosted by this node. Either every node sets it or none does, in which
    /// case validators are dealt round-robin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validators: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    NodeDown,
    ClockSkew,
    StreamDrop,
}

impl std::fmt::Display for FaultKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FaultKind::NodeDown => "node_down",
            FaultKind::ClockSkew => "clock_skew",
            FaultKind::StreamDrop => "stream_drop",
        })
    }
}

/// A fault active on one node for slots `first_slot..=last_slot`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub node: String,
    pub kind: FaultKind,
    pub first_slot: u64,
    pub last_slot: u64,
    /// Clock offset for `clock_skew`; negative means the node's clock runs behind.
    #[serde(default)]
    pub skew_ms: i64,
}

impl Fault {
    pub fn new(node: impl Into<String>, kind: FaultKind, first_slot: u64, last_slot: u64) -> Self {
        Self {
            node: node.into(),
            kind,
            first_slot,
            last_slot,
            skew_ms: 0,
        }
    }

    pub fn with_skew(mut self, skew_ms: i64) -> Self {
        self.skew_ms = skew_ms;
        self
    }

    pub fn covers_slot(&self, slot: u64) -> bool {
        (self.first_slot..=self.last_slot).contains(&slot)
    }

    /// Window in milliseconds since genesis, end exclusive.
    pub fn window_ms(&self, ms_per_slot: u64) -> (u64, u64) {
        (self.first_slot * ms_per_slot, (self.last_slot + 1) * ms_per_slot)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDelay {
    pub slot: u64,
    pub extra_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub duration_slots: u64,
    pub validators: u64,
    #[serde(default = "default_base_reward")]
    pub base_reward: u64,
    #[serde(default)]
    pub spec: ChainSpec,
    #[serde(default, rename = "region")]
    pub regions: Vec<RegionProfile>,
    #[serde(default, rename = "latency")]
    pub latencies: Vec<LatencyRule>,
    #[serde(default, rename = "node")]
    pub nodes: Vec<NodeConfig>,
    #[serde(default, rename = "fault")]
    pub faults: Vec<Fault>,
    #[serde(default, rename = "block_delay")]
    pub block_delays: Vec<BlockDelay>,
}

fn default_base_reward() -> u64 {
    64
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Single region, zero latency, zero processing: every duty is performed perfectly.
    pub fn ideal(seed: u64, nodes: usize, validators: u64, duration_slots: u64) -> Self {
        Self {
            seed,
            duration_slots,
            validators,
            base_reward: default_base_reward(),
            spec: ChainSpec::default(),
            regions: vec![RegionProfile {
                name: "local".into(),
                peer_count: 50,
                processing_ms: 0.0,
                jitter_ms: 0.0,
            }],
            latencies: vec![],
            nodes: (0..nodes)
                .map(|i| NodeConfig {
                    id: format!("node-{i}"),
                    region: "local".into(),
                    client: "sim".into(),
                    peer_count: None,
                    processing_ms: None,
                    jitter_ms: None,
                    api_delay_ms: 0,
                    validators: None,
                })
                .collect(),
            faults: vec![],
            block_delays: vec![],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.spec.validate()?;
        if self.duration_slots < self.spec.slots_per_epoch {
            return Err(ConfigError::DurationTooShort {
                duration: self.duration_slots,
                epoch: self.spec.slots_per_epoch,
            });
        }
        if self.nodes.is_empty() || self.validators == 0 {
            return Err(ConfigError::Empty);
        }
        if self.base_reward == 0 {
            return Err(ConfigError::Invalid("base_reward must be positive".into()));
        }

        let mut regions = BTreeSet::new();
        for r in &self.regions {
            if r.name.is_empty() || r.name == "*" {
                return Err(ConfigError::Invalid(format!("bad region name `{}`", r.name)));
            }
            if !regions.insert(r.name.as_str()) {
                return Err(ConfigError::Duplicate { what: "region", name: r.name.clone() });
            }
            check_profile(&r.name, r.peer_count, r.processing_ms, r.jitter_ms)?;
        }
        for l in &self.latencies {
            for end in [&l.from, &l.to] {
                if end != "*" && !regions.contains(end.as_str()) {
                    return Err(ConfigError::UnknownLatencyRegion(end.clone()));
                }
            }
            let ok = [l.median_ms, l.sigma, l.shift_ms].iter().all(|v| v.is_finite())
                && l.median_ms >= 0.0
                && l.sigma >= 0.0
                && (l.sigma > 0.0 || l.median_ms + l.shift_ms >= 0.0);
            if !ok {
                return Err(ConfigError::Invalid(format!("latency rule {} -> {}", l.from, l.to)));
            }
        }

        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if n.id.is_empty() || n.client.is_empty() {
                return Err(ConfigError::Invalid("node id and client labels must be non-empty".into()));
            }
            if !ids.insert(n.id.as_str()) {
                return Err(ConfigError::Duplicate { what: "node", name: n.id.clone() });
            }
            let Some(region) = self.region(&n.region) else {
                return Err(ConfigError::UnknownRegion { node: n.id.clone(), region: n.region.clone() });
            };
            check_profile(
                &n.id,
                n.peer_count.unwrap_or(region.peer_count),
                n.processing_ms.unwrap_or(region.processing_ms),
                n.jitter_ms.unwrap_or(region.jitter_ms),
            )?;
        }
        let explicit = self.nodes.iter().filter(|n| n.validators.is_some()).count();
        if explicit > 0 {
            let assigned: u64 = self.nodes.iter().filter_map(|n| n.validators).sum();
            if explicit != self.nodes.len() || assigned != self.validators {
                return Err(ConfigError::ValidatorSplit { assigned, expected: self.validators });
            }
        }

        for (i, f) in self.faults.iter().enumerate() {
            if !ids.contains(f.node.as_str()) {
                return Err(ConfigError::UnknownNode(f.node.clone()));
            }
            if f.first_slot > f.last_slot || f.last_slot >= self.duration_slots {
                return Err(ConfigError::WindowOutsideRun {
                    first: f.first_slot,
                    last: f.last_slot,
                    duration: self.duration_slots,
                });
            }
            if f.kind == FaultKind::ClockSkew && f.skew_ms == 0 {
                return Err(ConfigError::Invalid("clock_skew fault needs a non-zero skew_ms".into()));
            }
            let overlaps = self.faults[..i].iter().any(|g| {
                g.node == f.node && g.kind == f.kind && g.first_slot <= f.last_slot && f.first_slot <= g.last_slot
            });
            if overlaps {
                return Err(ConfigError::OverlappingFault { node: f.node.clone(), kind: f.kind });
            }
        }
        for d in &self.block_delays {
            if d.slot >= self.duration_slots {
                return Err(ConfigError::DelayOutsideRun(d.slot));
            }
        }
        Ok(())
    }

    pub fn region(&self, name: &str) -> Option<&RegionProfile> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn node_labels(&self) -> Vec<NodeLabel> {
        self.nodes
            .iter()
            .map(|n| NodeLabel::new(&n.id, &n.region, &n.client))
            .collect()
    }

    /// Most specific latency rule for a directed region pair; `None` means zero latency.
    pub fn latency(&self, from: &str, to: &str) -> Option<&LatencyRule> {
        let rank = |l: &LatencyRule| match (l.from == from, l.to == to) {
            (true, true) => Some(0),
            (true, false) if l.to == "*" => Some(1),
            (false, true) if l.from == "*" => Some(2),
            (false, false) if l.from == "*" && l.to == "*" => Some(3),
            _ => None,
        };
        self.latencies
            .iter()
            .filter_map(|l| rank(l).map(|r| (r, l)))
            .min_by_key(|(r, _)| *r)
            .map(|(_, l)| l)
    }

    /// Index of the hosting node for every validator.
    pub fn validator_nodes(&self) -> Vec<u32> {
        if self.nodes.iter().all(|n| n.validators.is_some()) {
            self.nodes
                .iter()
                .enumerate()
                .flat_map(|(i, n)| std::iter::repeat_n(i as u32, n.validators.unwrap_or(0) as usize))
                .collect()
        } else {
            (0..self.validators)
                .map(|v| (v % self.nodes.len() as u64) as u32)
                .collect()
        }
    }

    /// Slots simulated: the measured duration plus one epoch so late inclusions settle.
    pub fn total_slots(&self) -> u64 {
        self.duration_slots + self.spec.slots_per_epoch
    }
}

fn check_profile(name: &str, peers: u32, processing: f64, jitter: f64) -> Result<(), ConfigError> {
    if peers == 0 {
        return Err(ConfigError::Invalid(format!("`{name}`: peer_count must be at least 1")));
    }
    if !(processing.is_finite() && jitter.is_finite() && processing >= 0.0 && jitter >= 0.0) {
        return Err(ConfigError::Invalid(format!("`{name}`: processing delays must be non-negative")));
    }
    Ok(())
}

/// Copy of `config` with `fault` added.
pub fn inject_fault(config: &SimConfig, fault: Fault) -> Result<SimConfig, ConfigError> {
    let mut out = config.clone();
    out.faults.push(fault);
    out.validate()?;
    Ok(out)
}
