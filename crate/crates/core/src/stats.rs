//! Per-group duty statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ScoringError;
use crate::labels::GroupBy;
use crate::rewards::EpochPerformance;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub group: String,
    /// Validator-epochs in the group.
    pub records: u64,
    pub achieved_reward: f64,
    pub mer: f64,
    /// `None` when the group's MER is zero.
    pub achieved_pct: Option<f64>,
    pub missed_source_ratio: f64,
    pub missed_target_ratio: f64,
    pub missed_head_ratio: f64,
    pub proposals_assigned: u64,
    pub proposals_missed: u64,
    pub missed_proposal_ratio: Option<f64>,
}

struct Acc<T> {
    records: u64,
    achieved: Option<T>,
    mer: Option<T>,
    missed: [u64; 3],
    assigned: u64,
    fulfilled: u64,
}

impl<T> Default for Acc<T> {
    fn default() -> Self {
        Self {
            records: 0,
            achieved: None,
            mer: None,
            missed: [0; 3],
            assigned: 0,
            fulfilled: 0,
        }
    }
}

/// Aggregate performances by location, client or node. Rows are ordered by group label.
pub fn aggregate_stats<'a, T: Scalar>(
    records: impl IntoIterator<Item = &'a EpochPerformance<T>>,
    group_by: GroupBy,
) -> Result<Vec<StatRow>, ScoringError> {
    let mut groups: BTreeMap<&str, Acc<T>> = BTreeMap::new();
    for r in records {
        let acc = groups.entry(r.node.group(group_by)).or_default();
        acc.records += 1;
        acc.achieved = Some(acc.achieved.unwrap_or_else(T::zero) + r.achieved_reward);
        acc.mer = Some(acc.mer.unwrap_or_else(T::zero) + r.mer);
        acc.missed[0] += !r.flags.source as u64;
        acc.missed[1] += !r.flags.target as u64;
        acc.missed[2] += !r.flags.head as u64;
        acc.assigned += r.proposals_assigned;
        acc.fulfilled += r.proposals_fulfilled.min(r.proposals_assigned);
    }
    if groups.is_empty() {
        return Err(ScoringError::EmptyInput);
    }
    Ok(groups
        .into_iter()
        .map(|(group, acc)| {
            let achieved = acc.achieved.unwrap_or_else(T::zero);
            let mer = acc.mer.unwrap_or_else(T::zero);
            let n = acc.records as f64;
            let missed = acc.assigned - acc.fulfilled;
            StatRow {
                group: group.to_string(),
                records: acc.records,
                achieved_reward: achieved.to_f64_lossy(),
                mer: mer.to_f64_lossy(),
                achieved_pct: (mer > T::zero())
                    .then(|| (achieved / mer).to_f64_lossy() * 100.0),
                missed_source_ratio: acc.missed[0] as f64 / n,
                missed_target_ratio: acc.missed[1] as f64 / n,
                missed_head_ratio: acc.missed[2] as f64 / n,
                proposals_assigned: acc.assigned,
                proposals_missed: missed,
                missed_proposal_ratio: (acc.assigned > 0)
                    .then(|| missed as f64 / acc.assigned as f64),
            }
        })
        .collect())
}
