//! Report tables over a log or a simulation run.
//!
//! Every report sorts its rows by group label and prints ratios as percentages with
//! one decimal. Output depends only on the input records and the [`ReportSpec`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use clperf_core::telemetry::REPORTED_PERCENTILES;
use clperf_core::{
    aggregate_stats, latency_cdf, reorg_stats, ArrivalRecord, EventKind, GroupBy, NodeLabel, Performance,
    ReorgEvent, Slot, SyncSpan, SyncState,
};
use clperf_sim::RunOutput;

use crate::ingest::simulation_records;
use crate::record::{BlockScoreRecord, CandidateStatus, Payload, Record};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReportKind {
    RewardsByLocation,
    MissedFlags,
    MissedBlocks,
    Reorgs,
    BlockScores,
    ArrivalCdf,
    OutOfSync,
    ClientLocationHeatmap,
}

impl ReportKind {
    pub const ALL: [ReportKind; 8] = [
        ReportKind::RewardsByLocation,
        ReportKind::MissedFlags,
        ReportKind::MissedBlocks,
        ReportKind::Reorgs,
        ReportKind::BlockScores,
        ReportKind::ArrivalCdf,
        ReportKind::OutOfSync,
        ReportKind::ClientLocationHeatmap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::RewardsByLocation => "rewards_by_location",
            ReportKind::MissedFlags => "missed_flags",
            ReportKind::MissedBlocks => "missed_blocks",
            ReportKind::Reorgs => "reorgs",
            ReportKind::BlockScores => "block_scores",
            ReportKind::ArrivalCdf => "arrival_cdf",
            ReportKind::OutOfSync => "out_of_sync",
            ReportKind::ClientLocationHeatmap => "client_location_heatmap",
        }
    }

    /// Record types the report cannot do without. Reorg counts need the node roster
    /// from sync spans, since a run without reorgs logs none.
    pub fn required(self) -> &'static [&'static str] {
        match self {
            ReportKind::RewardsByLocation | ReportKind::MissedFlags | ReportKind::MissedBlocks => {
                &["epoch_performance"]
            }
            ReportKind::Reorgs | ReportKind::OutOfSync => &["sync_span"],
            ReportKind::BlockScores => &["block_score"],
            ReportKind::ArrivalCdf | ReportKind::ClientLocationHeatmap => &["arrival"],
        }
    }

    pub fn default_group(self) -> GroupBy {
        match self {
            ReportKind::OutOfSync => GroupBy::Node,
            _ => GroupBy::Location,
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            format!("unknown report kind `{s}` ({})", names.join("|"))
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format `{other}` (table|csv)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportSpec {
    pub kind: ReportKind,
    /// Falls back to the kind's default. The heatmap ignores it.
    pub group_by: Option<GroupBy>,
    /// Inclusive slot bounds.
    pub from_slot: Option<Slot>,
    pub to_slot: Option<Slot>,
    pub format: ReportFormat,
}

impl ReportSpec {
    pub fn new(kind: ReportKind) -> Self {
        Self {
            kind,
            group_by: None,
            from_slot: None,
            to_slot: None,
            format: ReportFormat::Table,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let (Some(a), Some(b)) = (self.from_slot, self.to_slot) {
            if a > b {
                return Err(CliError::Config(format!("empty slot window {}..={}", a.0, b.0)));
            }
        }
        Ok(())
    }

    fn group(&self) -> GroupBy {
        self.group_by.unwrap_or(self.kind.default_group())
    }

    fn contains(&self, slot: Slot) -> bool {
        self.from_slot.is_none_or(|a| slot >= a) && self.to_slot.is_none_or(|b| slot <= b)
    }
}

/// Records a report draws on, for one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportInput {
    pub nodes: Vec<NodeLabel>,
    pub slots_per_epoch: u64,
    pub arrivals: Vec<ArrivalRecord>,
    pub scores: Vec<BlockScoreRecord>,
    pub performances: Vec<Performance>,
    pub reorgs: Vec<ReorgEvent>,
    pub spans: Vec<SyncSpan>,
    present: BTreeSet<&'static str>,
}

impl ReportInput {
    pub fn from_payloads<'a>(payloads: impl IntoIterator<Item = &'a Payload>) -> Self {
        let mut input = ReportInput {
            slots_per_epoch: clperf_core::ChainSpec::default().slots_per_epoch,
            ..Self::default()
        };
        let mut roster = None;
        for p in payloads {
            input.present.insert(p.type_name());
            match p {
                Payload::Arrival(a) => input.arrivals.push(a.clone()),
                Payload::BlockScore(s) => input.scores.push(s.clone()),
                Payload::EpochPerformance(e) => input.performances.push(e.clone()),
                Payload::Reorg(r) => input.reorgs.push(r.clone()),
                Payload::SyncSpan(s) => input.spans.push(s.clone()),
                Payload::GroundTruth(t) => {
                    input.slots_per_epoch = t.spec.slots_per_epoch;
                    roster = Some(t.nodes.clone());
                }
            }
        }
        input.nodes = roster.unwrap_or_else(|| {
            let seen: BTreeSet<&NodeLabel> = input
                .arrivals
                .iter()
                .map(|a| &a.node)
                .chain(input.scores.iter().map(|s| &s.node))
                .chain(input.spans.iter().map(|s| &s.node))
                .chain(input.reorgs.iter().map(|r| &r.node))
                .collect();
            seen.into_iter().cloned().collect()
        });
        input
    }

    /// Records of one run. A log holding several runs needs `run` to pick one.
    pub fn from_records(records: &[Record], run: Option<&str>) -> Result<Self, CliError> {
        let mut runs: Vec<&str> = records.iter().map(|r| r.run.as_str()).collect();
        runs.sort_unstable();
        runs.dedup();
        let run = match run {
            Some(r) if runs.contains(&r) => r,
            Some(r) => return Err(CliError::Data(format!("run `{r}` is not in the log"))),
            None if runs.len() > 1 => {
                return Err(CliError::Config(format!(
                    "log holds {} runs ({}); choose one with --run",
                    runs.len(),
                    runs.join(", ")
                )))
            }
            None => runs.first().copied().unwrap_or_default(),
        };
        Ok(Self::from_payloads(records.iter().filter(|r| r.run == run).map(|r| &r.payload)))
    }

    /// Input computed from a run without going through a log.
    pub fn from_run(output: &RunOutput) -> Result<Self, CliError> {
        let (payloads, _) = simulation_records(output).map_err(|e| CliError::Data(format!("scoring failed: {e}")))?;
        Ok(Self::from_payloads(&payloads))
    }
}

/// A rendered report: header plus rows of formatted cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Aligned columns: the first left-aligned, the rest right-aligned.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are utf-8")
    }

    pub fn format(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Table => self.to_text(),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

fn pct(ratio: f64) -> String {
    format!("{:.1}", ratio * 100.0)
}

fn one(v: f64) -> String {
    format!("{v:.1}")
}

fn opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map_or_else(|| "-".to_string(), f)
}

fn group_name(by: GroupBy) -> &'static str {
    match by {
        GroupBy::Location => "location",
        GroupBy::Client => "client",
        GroupBy::Node => "node",
    }
}

fn insufficient(kind: ReportKind, missing: &[&str]) -> CliError {
    CliError::Data(format!(
        "insufficient data for {kind}: no {} records",
        missing.join(", ")
    ))
}

pub fn render(spec: &ReportSpec, input: &ReportInput) -> Result<Table, CliError> {
    spec.validate()?;
    let missing: Vec<&str> = spec
        .kind
        .required()
        .iter()
        .copied()
        .filter(|t| !input.present.contains(t))
        .collect();
    if !missing.is_empty() {
        return Err(insufficient(spec.kind, &missing));
    }
    let by = spec.group();
    let g = group_name(by);
    let spe = input.slots_per_epoch;
    let performances: Vec<&Performance> = input
        .performances
        .iter()
        .filter(|p| spec.contains(Slot(p.epoch.0 * spe)) && spec.contains(Slot(p.epoch.0 * spe + spe - 1)))
        .collect();
    let window_empty = |what: &str| CliError::Data(format!("no {what} records in the slot window"));

    let mut table;
    match spec.kind {
        ReportKind::RewardsByLocation | ReportKind::MissedFlags | ReportKind::MissedBlocks => {
            let rows = aggregate_stats(performances.iter().copied(), by).map_err(|_| window_empty("epoch_performance"))?;
            table = match spec.kind {
                ReportKind::RewardsByLocation => {
                    Table::new(&[g, "validator_epochs", "achieved", "mer", "achieved_pct"])
                }
                ReportKind::MissedFlags => Table::new(&[
                    g,
                    "validator_epochs",
                    "missed_source_pct",
                    "missed_target_pct",
                    "missed_head_pct",
                ]),
                _ => Table::new(&[g, "proposals", "missed", "missed_pct"]),
            };
            for r in rows {
                table.rows.push(match spec.kind {
                    ReportKind::RewardsByLocation => vec![
                        r.group,
                        r.records.to_string(),
                        one(r.achieved_reward),
                        one(r.mer),
                        opt(r.achieved_pct, one),
                    ],
                    ReportKind::MissedFlags => vec![
                        r.group,
                        r.records.to_string(),
                        pct(r.missed_source_ratio),
                        pct(r.missed_target_ratio),
                        pct(r.missed_head_ratio),
                    ],
                    _ => vec![
                        r.group,
                        r.proposals_assigned.to_string(),
                        r.proposals_missed.to_string(),
                        opt(r.missed_proposal_ratio, pct),
                    ],
                });
            }
        }
        ReportKind::Reorgs => {
            let known: Vec<String> = input.nodes.iter().map(|n| n.group(by).to_string()).collect();
            let summary = reorg_stats(input.reorgs.iter().filter(|r| spec.contains(r.slot)), by, &known);
            table = Table::new(&[g, "reorgs", "known_depths", "mean_depth", "delta_vs_average"]);
            for r in summary.groups {
                table.rows.push(vec![
                    r.group,
                    r.count.to_string(),
                    r.known_depths.to_string(),
                    opt(r.mean_depth, one),
                    one(r.delta_vs_average),
                ]);
            }
        }
        ReportKind::BlockScores => {
            #[derive(Default)]
            struct Acc {
                requests: u64,
                blocks: u64,
                best: u64,
                score: f64,
                votes: u64,
                relative: f64,
                relative_n: u64,
            }
            let mut groups: BTreeMap<&str, Acc> = BTreeMap::new();
            for s in input.scores.iter().filter(|s| spec.contains(s.slot)) {
                let acc = groups.entry(s.node.group(by)).or_default();
                acc.requests += 1;
                if s.status != CandidateStatus::Block {
                    continue;
                }
                acc.blocks += 1;
                acc.best += (s.rank == Some(1)) as u64;
                if let Some(score) = &s.score {
                    acc.score += score.score;
                    acc.votes += score.new_votes;
                }
                if let Some(r) = s.relative {
                    acc.relative += r;
                    acc.relative_n += 1;
                }
            }
            if groups.is_empty() {
                return Err(window_empty("block_score"));
            }
            table = Table::new(&[
                g,
                "requests",
                "blocks",
                "unavailable",
                "best",
                "mean_score",
                "mean_new_votes",
                "mean_relative_pct",
            ]);
            for (group, a) in groups {
                let per_block = |v: f64| (a.blocks > 0).then(|| v / a.blocks as f64);
                table.rows.push(vec![
                    group.to_string(),
                    a.requests.to_string(),
                    a.blocks.to_string(),
                    (a.requests - a.blocks).to_string(),
                    a.best.to_string(),
                    opt(per_block(a.score), one),
                    opt(per_block(a.votes as f64), one),
                    opt((a.relative_n > 0).then(|| a.relative / a.relative_n as f64), pct),
                ]);
            }
        }
        ReportKind::ArrivalCdf => {
            let mut groups: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
            for a in block_arrivals(input, spec) {
                groups.entry(a.node.group(by)).or_default().push(a.arrival_offset_ms);
            }
            if groups.is_empty() {
                return Err(window_empty("block arrival"));
            }
            table = Table::new(&[g, "percentile", "offset_ms"]);
            for (group, offsets) in groups {
                let cdf = latency_cdf(offsets).expect("groups are non-empty");
                for p in REPORTED_PERCENTILES {
                    let v = cdf.at(p).expect("reported percentile");
                    table.rows.push(vec![group.to_string(), p.to_string(), v.to_string()]);
                }
                table.rows.push(vec![group.to_string(), "mean".into(), one(cdf.mean_ms)]);
            }
        }
        ReportKind::OutOfSync => {
            let mut groups: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
            for s in &input.spans {
                let first = spec.from_slot.map_or(s.first_slot, |a| a.max(s.first_slot));
                let last = spec.to_slot.map_or(s.last_slot, |b| b.min(s.last_slot));
                if first > last {
                    continue;
                }
                let slots = last.0 - first.0 + 1;
                let acc = groups.entry(s.node.group(by)).or_default();
                acc.0 += slots;
                if s.state == SyncState::OutOfSync {
                    acc.1 += slots;
                }
            }
            if groups.is_empty() {
                return Err(window_empty("sync_span"));
            }
            table = Table::new(&[g, "measured_slots", "out_of_sync_slots", "out_of_sync_pct"]);
            for (group, (measured, out)) in groups {
                table.rows.push(vec![
                    group.to_string(),
                    measured.to_string(),
                    out.to_string(),
                    pct(out as f64 / measured as f64),
                ]);
            }
        }
        ReportKind::ClientLocationHeatmap => {
            let mut cells: BTreeMap<(&str, &str), (u64, u64)> = BTreeMap::new();
            let mut locations: BTreeSet<&str> = BTreeSet::new();
            for a in block_arrivals(input, spec) {
                locations.insert(&a.node.location);
                let c = cells.entry((&a.node.client, &a.node.location)).or_default();
                c.0 += a.arrival_offset_ms;
                c.1 += 1;
            }
            if cells.is_empty() {
                return Err(window_empty("block arrival"));
            }
            let clients: BTreeSet<&str> = cells.keys().map(|(c, _)| *c).collect();
            let mut header = vec!["client"];
            header.extend(&locations);
            table = Table::new(&header);
            for client in clients {
                let mut row = vec![client.to_string()];
                for loc in &locations {
                    row.push(opt(
                        cells.get(&(client, *loc)).map(|(sum, n)| *sum as f64 / *n as f64),
                        one,
                    ));
                }
                table.rows.push(row);
            }
        }
    }
    Ok(table)
}

fn block_arrivals<'a>(input: &'a ReportInput, spec: &'a ReportSpec) -> impl Iterator<Item = &'a ArrivalRecord> {
    input
        .arrivals
        .iter()
        .filter(move |a| a.kind == EventKind::Block && spec.contains(a.slot))
}
