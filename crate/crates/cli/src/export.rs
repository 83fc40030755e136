//! One CSV file per record type, with flat columns ready for a relational import.

use std::path::{Path, PathBuf};

use crate::record::{Payload, Record};

fn header(kind: &str) -> &'static [&'static str] {
    match kind {
        "arrival" => &["id", "run", "node", "location", "client", "slot", "kind", "arrival_offset_ms", "skew"],
        "block_score" => &[
            "id", "run", "slot", "node", "location", "client", "status", "rank", "score", "new_votes", "new_source",
            "new_target", "new_head", "sync_bits", "attester_slashings", "proposer_slashings", "relative",
        ],
        "epoch_performance" => &[
            "id", "run", "validator", "epoch", "node", "location", "client", "achieved_reward", "mer", "source",
            "target", "head", "inclusion_delay", "proposals_assigned", "proposals_fulfilled", "sync_slots_assigned",
            "sync_slots_signed",
        ],
        "reorg" => &["id", "run", "node", "location", "client", "slot", "depth"],
        "sync_span" => &["id", "run", "node", "location", "client", "first_slot", "last_slot", "state"],
        _ => &[
            "id", "run", "seed", "duration_slots", "validators", "nodes", "canonical_blocks", "messages",
        ],
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn row(r: &Record) -> Vec<String> {
    let mut out = vec![r.origin.unwrap_or(r.id).to_string(), r.run.clone()];
    let label = |n: &clperf_core::NodeLabel| [n.node_id.clone(), n.location.clone(), n.client.clone()];
    match &r.payload {
        Payload::Arrival(a) => {
            out.extend(label(&a.node));
            out.extend([
                a.slot.0.to_string(),
                a.kind.topic().to_string(),
                a.arrival_offset_ms.to_string(),
                a.skew.to_string(),
            ]);
        }
        Payload::BlockScore(s) => {
            out.push(s.slot.0.to_string());
            out.extend(label(&s.node));
            let status = serde_json::to_value(s.status).expect("unit variant");
            out.push(status.as_str().unwrap_or_default().to_string());
            out.push(opt(s.rank));
            match &s.score {
                Some(b) => out.extend([
                    b.score.to_string(),
                    b.new_votes.to_string(),
                    b.new_source.to_string(),
                    b.new_target.to_string(),
                    b.new_head.to_string(),
                    b.sync_bits.to_string(),
                    b.attester_slashings.to_string(),
                    b.proposer_slashings.to_string(),
                ]),
                None => out.extend(std::iter::repeat_n(String::new(), 8)),
            }
            out.push(opt(s.relative));
        }
        Payload::EpochPerformance(p) => {
            out.extend([p.validator.0.to_string(), p.epoch.0.to_string()]);
            out.extend(label(&p.node));
            out.extend([
                p.achieved_reward.to_string(),
                p.mer.to_string(),
                p.flags.source.to_string(),
                p.flags.target.to_string(),
                p.flags.head.to_string(),
                opt(p.flags.inclusion_delay),
                p.proposals_assigned.to_string(),
                p.proposals_fulfilled.to_string(),
                p.sync_slots_assigned.to_string(),
                p.sync_slots_signed.to_string(),
            ]);
        }
        Payload::Reorg(e) => {
            out.extend(label(&e.node));
            out.extend([e.slot.0.to_string(), opt(e.depth)]);
        }
        Payload::SyncSpan(s) => {
            out.extend(label(&s.node));
            let state = serde_json::to_value(s.state).expect("unit variant");
            out.extend([
                s.first_slot.0.to_string(),
                s.last_slot.0.to_string(),
                state.as_str().unwrap_or_default().to_string(),
            ]);
        }
        Payload::GroundTruth(t) => out.extend([
            t.seed.to_string(),
            t.duration_slots.to_string(),
            t.validators.to_string(),
            t.nodes.len().to_string(),
            t.canonical_blocks.to_string(),
            t.messages.to_string(),
        ]),
    }
    out
}

/// Write `<type>.csv` for every record type into `dir`; returns the files written.
pub fn export_csv(records: &[Record], dir: &Path) -> Result<Vec<PathBuf>, csv::Error> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for kind in Payload::TYPES {
        let path = dir.join(format!("{kind}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header(kind))?;
        for r in records.iter().filter(|r| r.payload.type_name() == kind) {
            w.write_record(row(r))?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
