//! JSON documents exchanged with beacon nodes.
//!
//! Integers travel as decimal strings, as in the standard beacon API; the readers
//! also accept bare numbers. Unknown fields are ignored everywhere.

use std::collections::BTreeMap;

use clperf_core::{Aggregate, Bits, BlockSummary, ChainSpec, ClaimMatch, NodeLabel, Root, Slot, ValidatorId};
use serde::{Deserialize, Serialize};

/// Serde adapter for integers encoded as strings.
pub mod quoted {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Str(String),
        Unsigned(u64),
        Signed(i64),
    }

    impl Raw {
        fn into_string(self) -> String {
            match self {
                Raw::Str(s) => s,
                Raw::Unsigned(n) => n.to_string(),
                Raw::Signed(n) => n.to_string(),
            }
        }
    }

    pub fn serialize<T: Display, S: Serializer>(value: &T, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(value)
    }

    pub fn deserialize<'de, T, D>(deserializer: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        let s = Raw::deserialize(deserializer)?.into_string();
        s.parse().map_err(|e| serde::de::Error::custom(format!("`{s}`: {e}")))
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<T: Display, S: Serializer>(values: &[T], serializer: S) -> Result<S::Ok, S::Error> {
            let mut seq = serializer.serialize_seq(Some(values.len()))?;
            for v in values {
                seq.serialize_element(&v.to_string())?;
            }
            seq.end()
        }

        pub fn deserialize<'de, T, D>(deserializer: D) -> Result<Vec<T>, D::Error>
        where
            T: FromStr,
            T::Err: Display,
            D: Deserializer<'de>,
        {
            Vec::<Raw>::deserialize(deserializer)?
                .into_iter()
                .map(|r| {
                    let s = r.into_string();
                    s.parse().map_err(|e| serde::de::Error::custom(format!("`{s}`: {e}")))
                })
                .collect()
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<T: Display, S: Serializer>(value: &Option<T>, serializer: S) -> Result<S::Ok, S::Error> {
            match value {
                Some(v) => serializer.collect_str(v),
                None => serializer.serialize_none(),
            }
        }

        pub fn deserialize<'de, T, D>(deserializer: D) -> Result<Option<T>, D::Error>
        where
            T: FromStr,
            T::Err: Display,
            D: Deserializer<'de>,
        {
            Option::<Raw>::deserialize(deserializer)?
                .map(|r| {
                    let s = r.into_string();
                    s.parse().map_err(|e| serde::de::Error::custom(format!("`{s}`: {e}")))
                })
                .transpose()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub data: T,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionedEnvelope<T> {
    pub version: String,
    pub data: T,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: u16,
    pub message: String,
}

/// Payload of a `block` event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockEventDoc {
    #[serde(with = "quoted")]
    pub slot: u64,
    pub block: Root,
    #[serde(default)]
    pub execution_optimistic: bool,
}

/// Payload of a `head` event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadEventDoc {
    #[serde(with = "quoted")]
    pub slot: u64,
    pub block: Root,
    #[serde(default)]
    pub epoch_transition: bool,
    #[serde(default)]
    pub execution_optimistic: bool,
}

/// Payload of a `chain_reorg` event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorgEventDoc {
    #[serde(with = "quoted")]
    pub slot: u64,
    #[serde(default, with = "quoted::option", skip_serializing_if = "Option::is_none")]
    pub depth: Option<u64>,
    pub old_head_block: Root,
    pub new_head_block: Root,
    #[serde(with = "quoted")]
    pub epoch: u64,
    #[serde(default)]
    pub execution_optimistic: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncingDoc {
    #[serde(with = "quoted")]
    pub head_slot: u64,
    #[serde(with = "quoted")]
    pub sync_distance: u64,
    pub is_syncing: bool,
    #[serde(default)]
    pub is_optimistic: bool,
    #[serde(default)]
    pub el_offline: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisDoc {
    #[serde(with = "quoted")]
    pub genesis_time: u64,
    pub genesis_validators_root: Root,
    pub genesis_fork_version: String,
    /// Millisecond genesis served by the simulator; real nodes omit it.
    #[serde(default, with = "quoted::option", skip_serializing_if = "Option::is_none")]
    pub genesis_time_ms: Option<i64>,
}

impl GenesisDoc {
    pub fn genesis_ms(&self) -> i64 {
        self.genesis_time_ms.unwrap_or(self.genesis_time as i64 * 1000)
    }
}

/// Millisecond slot length served by a time-scaled simulator.
pub const SIM_MILLIS_PER_SLOT: &str = "SIM_MILLIS_PER_SLOT";

/// `/eth/v1/config/spec` entries, all string valued.
pub type SpecDoc = BTreeMap<String, String>;

const SPEC_KEYS: &[(&str, &str)] = &[
    ("SECONDS_PER_SLOT", "seconds_per_slot"),
    ("SLOTS_PER_EPOCH", "slots_per_epoch"),
    ("MAX_COMMITTEES_PER_SLOT", "max_committees_per_slot"),
    ("TARGET_COMMITTEE_SIZE", "target_committee_size"),
    ("SYNC_COMMITTEE_SIZE", "sync_committee_size"),
    ("EPOCHS_PER_SYNC_COMMITTEE_PERIOD", "sync_committee_period_epochs"),
    ("MAX_ATTESTATIONS", "max_aggregations_per_block"),
];

pub fn spec_doc(spec: &ChainSpec, wall_ms_per_slot: Option<u64>) -> SpecDoc {
    let values = [
        spec.seconds_per_slot,
        spec.slots_per_epoch,
        spec.max_committees_per_slot,
        spec.target_committee_size,
        spec.sync_committee_size,
        spec.sync_committee_period_epochs,
        spec.max_aggregations_per_block,
    ];
    let mut doc: SpecDoc = SPEC_KEYS
        .iter()
        .zip(values)
        .map(|((k, _), v)| (k.to_string(), v.to_string()))
        .collect();
    if let Some(ms) = wall_ms_per_slot {
        doc.insert(SIM_MILLIS_PER_SLOT.into(), ms.to_string());
    }
    doc
}

/// Applies the recognised entries on top of the defaults. Returns the spec and the wall
/// duration of a slot in ms.
pub fn spec_from_doc(doc: &SpecDoc) -> Result<(ChainSpec, u64), String> {
    let mut spec = ChainSpec::default();
    for (key, field) in SPEC_KEYS {
        if let Some(v) = doc.get(*key) {
            spec.set(field, v).map_err(|e| e.to_string())?;
        }
    }
    spec.validate().map_err(|e| e.to_string())?;
    let wall = match doc.get(SIM_MILLIS_PER_SLOT) {
        Some(v) => v.parse().map_err(|_| format!("bad {SIM_MILLIS_PER_SLOT} `{v}`"))?,
        None => spec.ms_per_slot(),
    };
    if wall == 0 {
        return Err(format!("{SIM_MILLIS_PER_SLOT} must be positive"));
    }
    Ok((spec, wall))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeDoc {
    #[serde(with = "quoted")]
    pub index: u64,
    #[serde(with = "quoted")]
    pub slot: u64,
    #[serde(with = "quoted::vec")]
    pub validators: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimsDoc {
    pub source: bool,
    pub target: bool,
    pub head: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateDoc {
    #[serde(with = "quoted")]
    pub slot: u64,
    #[serde(with = "quoted")]
    pub index: u64,
    /// One `0`/`1` character per committee member.
    pub aggregation_bits: Bits,
    pub claims: ClaimsDoc,
}

/// Summary-only block document, as served with `?summary=true`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSummaryDoc {
    #[serde(with = "quoted")]
    pub slot: u64,
    #[serde(with = "quoted")]
    pub proposer_index: u64,
    pub parent_root: Root,
    pub root: Root,
    #[serde(default)]
    pub aggregates: Vec<AggregateDoc>,
    #[serde(with = "quoted")]
    pub sync_participation: u64,
    #[serde(default, with = "quoted")]
    pub attester_slashings: u64,
    #[serde(default, with = "quoted")]
    pub proposer_slashings: u64,
}

impl From<&BlockSummary> for BlockSummaryDoc {
    fn from(b: &BlockSummary) -> Self {
        Self {
            slot: b.slot.0,
            proposer_index: b.proposer.0,
            parent_root: b.parent_root,
            root: b.root,
            aggregates: b
                .aggregates
                .iter()
                .map(|a| AggregateDoc {
                    slot: a.attested_slot.0,
                    index: a.committee_index,
                    aggregation_bits: a.bits.clone(),
                    claims: ClaimsDoc {
                        source: a.claims.source,
                        target: a.claims.target,
                        head: a.claims.head,
                    },
                })
                .collect(),
            sync_participation: b.sync_bits,
            attester_slashings: b.attester_slashings,
            proposer_slashings: b.proposer_slashings,
        }
    }
}

impl BlockSummaryDoc {
    pub fn into_summary(self, source: NodeLabel) -> BlockSummary {
        BlockSummary {
            slot: Slot(self.slot),
            proposer: ValidatorId(self.proposer_index),
            parent_root: self.parent_root,
            root: self.root,
            aggregates: self
                .aggregates
                .into_iter()
                .map(|a| Aggregate {
                    attested_slot: Slot(a.slot),
                    committee_index: a.index,
                    bits: a.aggregation_bits,
                    claims: ClaimMatch {
                        source: a.claims.source,
                        target: a.claims.target,
                        head: a.claims.head,
                    },
                })
                .collect(),
            sync_bits: self.sync_participation,
            attester_slashings: self.attester_slashings,
            proposer_slashings: self.proposer_slashings,
            source,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoted_numbers_both_ways() {
        let doc: SyncingDoc =
            serde_json::from_str(r#"{"head_slot":"99","sync_distance":0,"is_syncing":false,"extra":1}"#).unwrap();
        assert_eq!(doc.head_slot, 99);
        let out = serde_json::to_value(&doc).unwrap();
        assert_eq!(out["head_slot"], "99");
        assert_eq!(out["sync_distance"], "0");
    }

    #[test]
    fn spec_doc_round_trip() {
        let spec = ChainSpec { slots_per_epoch: 8, ..ChainSpec::default() };
        let (back, wall) = spec_from_doc(&spec_doc(&spec, Some(60))).unwrap();
        assert_eq!(back.slots_per_epoch, 8);
        assert_eq!(wall, 60);
        let (_, real) = spec_from_doc(&spec_doc(&spec, None)).unwrap();
        assert_eq!(real, 12_000);
    }

    #[test]
    fn reorg_without_depth() {
        let r: ReorgEventDoc = serde_json::from_str(&format!(
            r#"{{"slot":"5","old_head_block":"{z}","new_head_block":"{z}","epoch":"0"}}"#,
            z = Root::ZERO
        ))
        .unwrap();
        assert_eq!(r.depth, None);
    }
}
