//! Append-only record log.
//!
//! One JSON object per line:
//!
//! | field | meaning |
//! |---|---|
//! | `id` | ingestion id, strictly increasing within a log |
//! | `v` | schema version, currently 1 |
//! | `run` | label of the simulation or collection that produced the record |
//! | `origin` | id in the log the record was first written to, when copied by replay |
//! | `type` | `arrival`, `block_score`, `epoch_performance`, `reorg`, `sync_span`, `ground_truth` |
//! | ... | the record's own fields |
//! | `h` | hex SHA-256 of the previous line's `h` and this line without `h` |
//!
//! `h` is always the last field, so the hashed text is the line with its
//! `,"h":"..."` suffix removed. The first line chains from 64 zeros.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use clperf_core::{
    ArrivalRecord, BlockScore, ChainSpec, NodeLabel, Performance, ReorgEvent, Reward, Slot, SyncSpan,
};
use clperf_sim::StreamStats;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;
const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: schema version {found}, this build reads version {expected}")]
    Version { line: usize, found: u32, expected: u32 },
    #[error("line {line}: {reason}")]
    Tampered { line: usize, reason: String },
}

/// How a candidate request ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Block,
    OutOfSync,
    Down,
    Timeout,
    ProtocolError,
    EndpointDown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockScoreRecord {
    pub slot: Slot,
    pub node: NodeLabel,
    pub status: CandidateStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<BlockScore<Reward>>,
    /// Score over the best candidate of the slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative: Option<f64>,
}

/// Run-level facts from the simulator, kept small on purpose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSummary {
    pub seed: u64,
    pub spec: ChainSpec,
    pub duration_slots: u64,
    pub validators: u64,
    pub nodes: Vec<NodeLabel>,
    pub canonical_blocks: u64,
    pub messages: u64,
    pub stream_stats: Vec<StreamStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Arrival(ArrivalRecord),
    BlockScore(BlockScoreRecord),
    EpochPerformance(Performance),
    Reorg(ReorgEvent),
    SyncSpan(SyncSpan),
    GroundTruth(TruthSummary),
}

impl Payload {
    pub const TYPES: [&'static str; 6] =
        ["arrival", "block_score", "epoch_performance", "reorg", "sync_span", "ground_truth"];

    pub fn type_name(&self) -> &'static str {
        match self {
            Payload::Arrival(_) => "arrival",
            Payload::BlockScore(_) => "block_score",
            Payload::EpochPerformance(_) => "epoch_performance",
            Payload::Reorg(_) => "reorg",
            Payload::SyncSpan(_) => "sync_span",
            Payload::GroundTruth(_) => "ground_truth",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: u64,
    pub v: u32,
    pub run: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<u64>,
    #[serde(flatten)]
    pub payload: Payload,
}

impl Record {
    /// Identity that survives copying between logs.
    pub fn key(&self) -> (String, u64) {
        (self.run.clone(), self.origin.unwrap_or(self.id))
    }
}

fn chain_hash(prev: &str, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(b"\n");
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

/// Writes records, continuing the id sequence and hash chain of what came before.
pub struct RecordWriter<W: Write> {
    out: W,
    next_id: u64,
    prev_hash: String,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            next_id: 1,
            prev_hash: GENESIS_HASH.to_string(),
        }
    }

    /// Continue after `last`, the final record of an existing log, and its hash.
    pub fn resume(out: W, last_id: u64, last_hash: String) -> Self {
        Self {
            out,
            next_id: last_id + 1,
            prev_hash: last_hash,
        }
    }

    pub fn write(&mut self, run: &str, origin: Option<u64>, payload: Payload) -> std::io::Result<u64> {
        let record = Record {
            id: self.next_id,
            v: SCHEMA_VERSION,
            run: run.to_string(),
            origin,
            payload,
        };
        let body = serde_json::to_string(&record).map_err(std::io::Error::other)?;
        let hash = chain_hash(&self.prev_hash, &body);
        let open = body.strip_suffix('}').expect("records serialize as objects");
        writeln!(self.out, "{open},\"h\":\"{hash}\"}}")?;
        self.prev_hash = hash;
        self.next_id += 1;
        Ok(record.id)
    }

    pub fn into_inner(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Parsed log plus what is needed to append to it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LogContents {
    pub records: Vec<Record>,
    pub last_hash: Option<String>,
}

impl LogContents {
    pub fn last_id(&self) -> u64 {
        self.records.last().map_or(0, |r| r.id)
    }

    pub fn runs(&self) -> Vec<String> {
        let mut runs: Vec<String> = Vec::new();
        for r in &self.records {
            if !runs.contains(&r.run) {
                runs.push(r.run.clone());
            }
        }
        runs
    }

    pub fn counts(&self) -> std::collections::BTreeMap<&'static str, u64> {
        let mut counts: std::collections::BTreeMap<&'static str, u64> =
            Payload::TYPES.iter().map(|t| (*t, 0)).collect();
        for r in &self.records {
            *counts.entry(r.payload.type_name()).or_default() += 1;
        }
        counts
    }
}

#[derive(Deserialize)]
struct Header {
    v: u32,
}

/// Parse a log. The schema version is always checked; `verify` also checks the
/// hash chain and id order.
pub fn parse_log(reader: impl BufRead, verify: bool) -> Result<LogContents, LogError> {
    let mut out = LogContents::default();
    let mut prev = GENESIS_HASH.to_string();
    let mut last_id = 0;
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|source| LogError::Io {
            path: format!("line {n}"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let header: Header = serde_json::from_str(&line).map_err(|source| LogError::Json { line: n, source })?;
        if header.v != SCHEMA_VERSION {
            return Err(LogError::Version {
                line: n,
                found: header.v,
                expected: SCHEMA_VERSION,
            });
        }
        let record: Record = serde_json::from_str(&line).map_err(|source| LogError::Json { line: n, source })?;
        let tampered = |reason: String| LogError::Tampered { line: n, reason };
        let (body, hash) = split_hash(&line).ok_or_else(|| tampered("missing trailing hash field".into()))?;
        if verify {
            if record.id <= last_id {
                return Err(tampered(format!("id {} does not follow {last_id}", record.id)));
            }
            let expected = chain_hash(&prev, &body);
            if expected != hash {
                return Err(tampered("hash chain broken".into()));
            }
            let canonical = serde_json::to_string(&record).map_err(|source| LogError::Json { line: n, source })?;
            if canonical != body {
                return Err(tampered("record is not in canonical form".into()));
            }
        }
        last_id = record.id;
        prev = hash.to_string();
        out.records.push(record);
    }
    out.last_hash = (!out.records.is_empty()).then_some(prev);
    Ok(out)
}

/// Splits `{...,"h":"<hex>"}` into the hashed body `{...}` and the hash.
fn split_hash(line: &str) -> Option<(String, &str)> {
    let start = line.rfind(",\"h\":\"")?;
    let hash = line[start + 6..].strip_suffix("\"}")?;
    if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    Some((format!("{}}}", &line[..start]), hash))
}

pub fn read_log(path: &Path, verify: bool) -> Result<LogContents, LogError> {
    let file = File::open(path).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_log(BufReader::new(file), verify)
}

/// Writer that continues the log at `path`, creating it if missing.
pub fn append_to(path: &Path) -> Result<(RecordWriter<BufWriter<File>>, LogContents), LogError> {
    let io = |source| LogError::Io {
        path: path.display().to_string(),
        source,
    };
    let existing = if path.exists() { read_log(path, true)? } else { LogContents::default() };
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let out = BufWriter::new(file);
    let writer = match &existing.last_hash {
        Some(h) => RecordWriter::resume(out, existing.last_id(), h.clone()),
        None => RecordWriter::new(out),
    };
    Ok((writer, existing))
}
