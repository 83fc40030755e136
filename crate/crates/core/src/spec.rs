//! Protocol constants.
//!
//! A [`ChainSpec`] can be loaded from a plain `key = value` file, one entry per
//! line, with `#` comments. Unknown keys are rejected so typos surface early.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SpecError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainSpec {
    pub seconds_per_slot: u64,
    pub slots_per_epoch: u64,
    pub attestation_deadline_s: u64,
    pub aggregation_deadline_s: u64,
    pub max_aggregations_per_block: u64,
    pub max_committees_per_slot: u64,
    /// Validators per committee before another committee is added to a slot.
    pub target_committee_size: u64,
    pub aggregators_per_committee: u64,
    pub sync_committee_size: u64,
    pub sync_committee_period_epochs: u64,
    /// Wall-clock seconds of slot 0 start.
    pub genesis_time: u64,
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self {
            seconds_per_slot: 12,
            slots_per_epoch: 32,
            attestation_deadline_s: 4,
            aggregation_deadline_s: 8,
            max_aggregations_per_block: 128,
            max_committees_per_slot: 64,
            target_committee_size: 128,
            aggregators_per_committee: 16,
            sync_committee_size: 512,
            sync_committee_period_epochs: 256,
            genesis_time: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "seconds_per_slot",
    "slots_per_epoch",
    "attestation_deadline_s",
    "aggregation_deadline_s",
    "max_aggregations_per_block",
    "max_committees_per_slot",
    "target_committee_size",
    "aggregators_per_committee",
    "sync_committee_size",
    "sync_committee_period_epochs",
    "genesis_time",
];

impl ChainSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if !(0 < self.attestation_deadline_s
            && self.attestation_deadline_s < self.aggregation_deadline_s
            && self.aggregation_deadline_s < self.seconds_per_slot)
        {
            return Err(SpecError::Deadlines {
                attestation: self.attestation_deadline_s,
                aggregation: self.aggregation_deadline_s,
                slot: self.seconds_per_slot,
            });
        }
        let counts = [
            ("slots_per_epoch", self.slots_per_epoch),
            ("max_aggregations_per_block", self.max_aggregations_per_block),
            ("max_committees_per_slot", self.max_committees_per_slot),
            ("target_committee_size", self.target_committee_size),
            ("aggregators_per_committee", self.aggregators_per_committee),
            ("sync_committee_size", self.sync_committee_size),
            ("sync_committee_period_epochs", self.sync_committee_period_epochs),
        ];
        for (key, value) in counts {
            if value == 0 {
                return Err(SpecError::NonPositive(key));
            }
        }
        Ok(())
    }

    /// Set one field by its config key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SpecError> {
        let parsed: u64 = value.trim().parse().map_err(|_| SpecError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        })?;
        let slot = match key.trim() {
            "seconds_per_slot" => &mut self.seconds_per_slot,
            "slots_per_epoch" => &mut self.slots_per_epoch,
            "attestation_deadline_s" => &mut self.attestation_deadline_s,
            "aggregation_deadline_s" => &mut self.aggregation_deadline_s,
            "max_aggregations_per_block" => &mut self.max_aggregations_per_block,
            "max_committees_per_slot" => &mut self.max_committees_per_slot,
            "target_committee_size" => &mut self.target_committee_size,
            "aggregators_per_committee" => &mut self.aggregators_per_committee,
            "sync_committee_size" => &mut self.sync_committee_size,
            "sync_committee_period_epochs" => &mut self.sync_committee_period_epochs,
            "genesis_time" => &mut self.genesis_time,
            other => return Err(SpecError::UnknownKey(other.to_string())),
        };
        *slot = parsed;
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`, then validate.
    pub fn apply_config(mut self, text: &str) -> Result<Self, SpecError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(SpecError::Syntax(n + 1))?;
            self.set(key, value)?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn ms_per_slot(&self) -> u64 {
        self.seconds_per_slot * 1000
    }

    pub fn attestation_deadline_ms(&self) -> u64 {
        self.attestation_deadline_s * 1000
    }

    pub fn aggregation_deadline_ms(&self) -> u64 {
        self.aggregation_deadline_s * 1000
    }

    /// Inclusion window for a timely source vote: integer square root of the epoch length.
    pub fn source_inclusion_window(&self) -> u64 {
        self.slots_per_epoch.isqrt()
    }

    /// Inclusion window for a timely target vote.
    pub fn target_inclusion_window(&self) -> u64 {
        self.slots_per_epoch
    }

    pub fn committees_per_slot(&self, active_validators: u64) -> u64 {
        (active_validators / self.slots_per_epoch / self.target_committee_size)
            .clamp(1, self.max_committees_per_slot)
    }
}

impl FromStr for ChainSpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChainSpec::default().apply_config(s)
    }
}

impl fmt::Display for ChainSpec {
    /// Renders the `key = value` form accepted by [`ChainSpec::apply_config`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let values = [
            self.seconds_per_slot,
            self.slots_per_epoch,
            self.attestation_deadline_s,
            self.aggregation_deadline_s,
            self.max_aggregations_per_block,
            self.max_committees_per_slot,
            self.target_committee_size,
            self.aggregators_per_committee,
            self.sync_committee_size,
            self.sync_committee_period_epochs,
            self.genesis_time,
        ];
        for (key, value) in KEYS.iter().zip(values) {
            writeln!(f, "{key} = {value}")?;
        }
        Ok(())
    }
}
