//! Turning sources into records: simulation runs and other logs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use clperf_core::{
    compare_candidates, record_arrival, BlockError, BlockSummary, CandidateRanking, InclusionIndex, ObservedEvent,
    Reward, RewardWeights, ScoreParams, Slot, SlotClock,
};
use clperf_sim::{CandidateResult, GroundTruth, RunOutput, Unavailable};

use crate::record::{BlockScoreRecord, CandidateStatus, LogContents, Payload, RecordWriter, TruthSummary};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EndpointReport {
    pub node: String,
    pub problem: String,
}

/// What an ingestion wrote.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub counts: BTreeMap<&'static str, u64>,
    /// Events discarded because they claimed to arrive before their slot began.
    pub rejected: u64,
    /// Records skipped by replay because the destination already had them.
    pub duplicates: u64,
    pub endpoints: Vec<EndpointReport>,
}

impl IngestSummary {
    pub fn new() -> Self {
        Self {
            counts: Payload::TYPES.iter().map(|t| (*t, 0)).collect(),
            ..Self::default()
        }
    }

    pub fn count(&mut self, payload: &Payload) {
        *self.counts.entry(payload.type_name()).or_default() += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (kind, n) in &self.counts {
            writeln!(f, "{kind:<18} {n}")?;
        }
        if self.rejected > 0 {
            writeln!(f, "rejected (clock skew) {}", self.rejected)?;
        }
        if self.duplicates > 0 {
            writeln!(f, "skipped duplicates {}", self.duplicates)?;
        }
        for e in &self.endpoints {
            writeln!(f, "endpoint {}: {}", e.node, e.problem)?;
        }
        Ok(())
    }
}

pub fn truth_summary(truth: &GroundTruth) -> TruthSummary {
    TruthSummary {
        seed: truth.seed,
        spec: truth.spec.clone(),
        duration_slots: truth.duration_slots,
        validators: truth.validator_nodes.len() as u64,
        nodes: truth.nodes.clone(),
        canonical_blocks: truth.blocks.len() as u64,
        messages: truth.messages.len() as u64,
        stream_stats: truth.stream_stats.clone(),
    }
}

/// Rank every slot's candidates against the inclusion index built from the canonical
/// blocks before that slot.
pub fn score_candidates(truth: &GroundTruth) -> Result<Vec<BlockScoreRecord>, BlockError> {
    let params = ScoreParams::new(&truth.spec, RewardWeights::default());
    let mut by_slot: BTreeMap<u64, Vec<_>> = BTreeMap::new();
    for c in &truth.candidates {
        by_slot.entry(c.slot.0).or_default().push(c);
    }
    let mut index = InclusionIndex::new();
    let mut canonical = truth.blocks.iter().peekable();
    let mut out = Vec::new();
    for slot in 0..truth.duration_slots {
        while let Some(b) = canonical.next_if(|b| b.slot.0 < slot) {
            index.apply(b, truth, &params)?;
        }
        let Some(cands) = by_slot.get(&slot) else { continue };
        let blocks: Vec<BlockSummary> = cands
            .iter()
            .filter_map(|c| match &c.result {
                CandidateResult::Block(b) => Some(b.clone()),
                CandidateResult::Unavailable(_) => None,
            })
            .collect();
        if let CandidateRanking::Ranked(ranked) =
            compare_candidates::<Reward>(Slot(slot), &blocks, &index, truth, &params)?
        {
            out.extend(ranked.into_iter().map(|r| BlockScoreRecord {
                slot: Slot(slot),
                node: r.source,
                status: CandidateStatus::Block,
                rank: Some(r.rank),
                score: Some(r.score),
                relative: r.relative,
            }));
        }
        for c in cands {
            if let CandidateResult::Unavailable(u) = c.result {
                out.push(BlockScoreRecord {
                    slot: Slot(slot),
                    node: truth.nodes[c.node as usize].clone(),
                    status: match u {
                        Unavailable::OutOfSync => CandidateStatus::OutOfSync,
                        Unavailable::Down => CandidateStatus::Down,
                    },
                    rank: None,
                    score: None,
                    relative: None,
                });
            }
        }
    }
    Ok(out)
}

/// Records for a simulation run, in log order, and the number of events rejected for
/// clock skew.
pub fn simulation_records(output: &RunOutput) -> Result<(Vec<Payload>, u64), BlockError> {
    let truth = &output.truth;
    let mut out = vec![Payload::GroundTruth(truth_summary(truth))];
    let clock = SlotClock::from_spec(&truth.spec);
    let mut rejected = 0;
    for stream in &output.streams {
        for e in stream.events() {
            let observed = ObservedEvent {
                node: stream.node.clone(),
                kind: e.kind,
                slot: e.slot,
                receipt_ms: e.at_ms,
            };
            match record_arrival(&observed, &clock) {
                Ok(a) => out.push(Payload::Arrival(a)),
                Err(_) => rejected += 1,
            }
        }
    }
    out.extend(score_candidates(truth)?.into_iter().map(Payload::BlockScore));
    out.extend(truth.performances.iter().cloned().map(Payload::EpochPerformance));
    out.extend(truth.reorgs.iter().cloned().map(Payload::Reorg));
    out.extend(truth.sync_spans().into_iter().map(Payload::SyncSpan));
    Ok((out, rejected))
}

pub fn write_simulation<W: Write>(
    output: &RunOutput,
    run: &str,
    writer: &mut RecordWriter<W>,
) -> Result<IngestSummary, crate::CliError> {
    let (payloads, rejected) =
        simulation_records(output).map_err(|e| crate::CliError::Data(format!("scoring failed: {e}")))?;
    let mut summary = IngestSummary::new();
    summary.rejected = rejected;
    for p in payloads {
        summary.count(&p);
        writer
            .write(run, None, p)
            .map_err(|e| crate::CliError::Config(format!("writing log: {e}")))?;
    }
    Ok(summary)
}

/// Copy `source` records missing from `existing` through `writer`. Copies keep their
/// run label and remember their first id, so replaying twice adds nothing.
pub fn replay_into<W: Write>(
    source: &LogContents,
    existing: &LogContents,
    writer: &mut RecordWriter<W>,
) -> std::io::Result<IngestSummary> {
    let mut seen: BTreeSet<(String, u64)> = existing.records.iter().map(|r| r.key()).collect();
    let mut summary = IngestSummary::new();
    for r in &source.records {
        if !seen.insert(r.key()) {
            summary.duplicates += 1;
            continue;
        }
        summary.count(&r.payload);
        writer.write(&r.run, Some(r.origin.unwrap_or(r.id)), r.payload.clone())?;
    }
    Ok(summary)
}
