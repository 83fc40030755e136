//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero if any
//! fails. Run with `cargo test -p clperf-cli --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use clperf_cli::{simulation_records, Payload, ReportInput, ReportKind, ReportSpec};
use clperf_core::telemetry::{nearest_rank, REPORTED_PERCENTILES};
use clperf_core::{
    aggregate_stats, evaluate_attestation, latency_cdf, reorg_stats, score_block, update_index, Aggregate,
    AttestationRecord, Bits, BlockSummary, ChainSpec, ChainView, Checkpoint, ClaimMatch, CommitteeLookup, Epoch,
    EventKind, ExactReward, FlagVector, GroupBy, InclusionIndex, NodeLabel, Performance, RewardWeights, Root,
    ScoreParams, ScoringError, Slot, ValidatorId,
};
use clperf_sim::{run, LatencyRule, RegionProfile, RunOutput, SimConfig, FOUR_REGIONS};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

type Outcome = Result<String, String>;

fn sample<S: Strategy>(runner: &mut TestRunner, strategy: &S) -> S::Value {
    strategy.new_tree(runner).expect("strategy yields values").current()
}

// ---- 1: flag evaluation against a brute-force evaluator ----

fn root(n: u8) -> Root {
    Root([n.wrapping_add(1); 32])
}

const GENESIS: u8 = 250;

/// A chain as a plain vector of optional block roots, evaluated by direct search.
struct RawChain {
    spe: u64,
    blocks: Vec<Option<Root>>,
}

impl RawChain {
    /// Latest block at or before `s`.
    fn head(&self, s: u64) -> Root {
        self.blocks[..=s as usize].iter().rev().find_map(|b| *b).unwrap_or(root(GENESIS))
    }

    /// First block of the epoch, else the latest block before it.
    fn target(&self, e: u64) -> Root {
        let start = (e * self.spe) as usize;
        let in_epoch = self.blocks.iter().skip(start).take(self.spe as usize).find_map(|b| *b);
        in_epoch.unwrap_or_else(|| if start == 0 { root(GENESIS) } else { self.head(start as u64 - 1) })
    }

    fn source(&self, s: u64) -> Checkpoint {
        match s / self.spe {
            0 => Checkpoint { epoch: Epoch(0), root: root(GENESIS) },
            e => Checkpoint { epoch: Epoch(e - 1), root: self.target(e - 1) },
        }
    }

    fn evaluate(&self, att: &AttestationRecord) -> Option<FlagVector> {
        let Some(inc) = att.inclusion_slot else {
            return Some(FlagVector { source: false, target: false, head: false, inclusion_delay: None });
        };
        let s = att.attested_slot.0;
        if inc.0 <= s {
            return None;
        }
        let delay = inc.0 - s;
        let source_window = (1..=self.spe).filter(|w| w * w <= self.spe).max().unwrap();
        let e = s / self.spe;
        let source = att.claimed_source == self.source(s) && delay <= source_window;
        let target = source
            && att.claimed_target == (Checkpoint { epoch: Epoch(e), root: self.target(e) })
            && delay <= self.spe;
        let head = target && att.claimed_head == self.head(s) && delay == 1;
        Some(FlagVector { source, target, head, inclusion_delay: Some(delay) })
    }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut runner = TestRunner::deterministic();
    let chains = (
        prop::sample::select(vec![1u64, 2, 4, 8]),
        prop::collection::vec(any::<bool>(), 1..=8),
        prop::collection::vec((any::<u8>(), any::<[bool; 3]>(), any::<u8>(), 0u64..4, proptest::option::of(0u64..12)), 1..=16),
    );
    let (mut votes, mut mismatches) = (0, 0);
    for _ in 0..200 {
        let (spe, present, picks) = sample(&mut runner, &chains);
        let measured = present.len() as u64;
        let mut chain = RawChain {
            spe,
            blocks: present.iter().enumerate().map(|(i, &p)| p.then(|| root(i as u8))).collect(),
        };
        // extra blocks so that every inclusion slot is on chain
        chain.blocks.extend((0..12).map(|i| Some(root(100 + i))));
        let spec = ChainSpec { slots_per_epoch: spe, ..ChainSpec::default() };
        let mut view = ChainView::new(root(GENESIS), &spec);
        for b in &chain.blocks {
            match b {
                Some(r) => view.push_block(*r),
                None => view.push_empty(),
            };
        }
        for (v, (slot, correct, wrong, epoch_shift, inclusion)) in picks.into_iter().enumerate() {
            let s = slot as u64 % measured;
            let e = s / spe;
            let pick = |ok: bool, right: Root| if ok { right } else { root(wrong % 20) };
            let att = AttestationRecord {
                validator: ValidatorId(v as u64),
                attested_slot: Slot(s),
                claimed_source: Checkpoint { epoch: chain.source(s).epoch, root: pick(correct[0], chain.source(s).root) },
                claimed_target: Checkpoint {
                    epoch: Epoch(e + (epoch_shift == 0) as u64),
                    root: pick(correct[1], chain.target(e)),
                },
                claimed_head: pick(correct[2], chain.head(s)),
                inclusion_slot: inclusion.map(|d| Slot(s + d)),
            };
            let got = match evaluate_attestation(&att, &view, &spec) {
                Ok(f) => Some(f),
                Err(ScoringError::InclusionNotAfterAttestation { .. }) => None,
                Err(e) => return Err(format!("unexpected error {e}")),
            };
            votes += 1;
            mismatches += (got != chain.evaluate(&att)) as u32;
        }
    }
    let elapsed = started.elapsed();
    let detail = format!("200 chains, {votes} votes, {mismatches} mismatches, {elapsed:.2?}");
    if mismatches == 0 && elapsed < Duration::from_secs(10) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- shared scenarios ----

fn two_region(seed: u64) -> SimConfig {
    let mut cfg = SimConfig::ideal(seed, 8, 500, 1000);
    cfg.regions = ["near", "far"]
        .map(|name| RegionProfile { name: name.into(), peer_count: 50, processing_ms: 10.0, jitter_ms: 5.0 })
        .to_vec();
    cfg.latencies = vec![
        LatencyRule { from: "*".into(), to: "near".into(), median_ms: 1400.0, sigma: 0.35, shift_ms: 0.0 },
        LatencyRule { from: "*".into(), to: "far".into(), median_ms: 2500.0, sigma: 0.5, shift_ms: 0.0 },
    ];
    for (i, n) in cfg.nodes.iter_mut().enumerate() {
        n.id = format!("node-{i}");
        n.region = if i % 2 == 0 { "near" } else { "far" }.into();
    }
    cfg
}

fn fixture_scenario() -> SimConfig {
    let text = std::fs::read_to_string(common::fixtures().join("scenario.toml")).unwrap();
    SimConfig::from_toml(&text).unwrap()
}

fn preset() -> SimConfig {
    SimConfig::from_toml(FOUR_REGIONS).unwrap()
}

// ---- 2: implication chain over pipeline flag vectors ----

fn criterion_2() -> Outcome {
    let mut flags: Vec<FlagVector> = Vec::new();
    let mut seed = 0;
    while flags.len() < 10_000 {
        let out = run(&SimConfig { seed: 100 + seed, ..two_region(0) }).map_err(|e| e.to_string())?;
        flags.extend(out.truth.attestations.iter().map(|a| a.flags));
        seed += 1;
    }
    flags.truncate(10_000);
    let violations = flags
        .iter()
        .filter(|f| {
            (f.head && !f.target) || (f.target && !f.source) || (f.head && f.inclusion_delay != Some(1))
        })
        .count();
    let heads = flags.iter().filter(|f| f.head).count();
    let detail = format!("10000 vectors from {seed} runs ({heads} with head), {violations} violations");
    if violations == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 3: block-score dedup and monotonicity ----

fn rescoring_violations(out: &RunOutput) -> Result<(usize, usize), String> {
    let truth = &out.truth;
    let params = ScoreParams::new(&truth.spec, RewardWeights::default());
    let mut index = InclusionIndex::new();
    let mut violations = 0;
    for b in &truth.blocks {
        let after = update_index(&index, b, truth, &params).map_err(|e| e.to_string())?;
        let again = score_block::<ExactReward>(b, &after, truth, &params).map_err(|e| e.to_string())?;
        violations += (again.new_votes != 0) as usize;
        index = after;
    }
    Ok((truth.blocks.len(), violations))
}

struct Fixed;

impl CommitteeLookup for Fixed {
    fn committee(&self, slot: Slot, index: u64) -> Option<&[ValidatorId]> {
        static IDS: std::sync::OnceLock<Vec<ValidatorId>> = std::sync::OnceLock::new();
        let ids = IDS.get_or_init(|| (0..1000).map(ValidatorId).collect());
        let start = ((slot.0 * 2 + index) * 4) as usize;
        (index < 2).then(|| &ids[start..start + 4])
    }
}

fn block(slot: u64, aggregates: Vec<Aggregate>) -> BlockSummary {
    BlockSummary {
        slot: Slot(slot),
        proposer: ValidatorId(0),
        parent_root: Root::ZERO,
        root: root(slot as u8),
        aggregates,
        sync_bits: 0,
        attester_slashings: 0,
        proposer_slashings: 0,
        source: NodeLabel::new("n", "l", "c"),
    }
}

fn criterion_3() -> Outcome {
    let scenarios = [
        ("ideal", SimConfig::ideal(3, 4, 128, 128)),
        ("two-region", SimConfig { duration_slots: 256, ..two_region(3) }),
        ("fixture", fixture_scenario()),
        ("four-regions", preset()),
    ];
    let mut parts = Vec::new();
    let mut total_violations = 0;
    for (name, cfg) in scenarios {
        let out = run(&cfg).map_err(|e| e.to_string())?;
        let (blocks, violations) = rescoring_violations(&out)?;
        total_violations += violations;
        parts.push(format!("{name} {blocks} blocks"));
    }

    let aggregates = prop::collection::vec(
        (0u64..20, 0u64..2, prop::collection::vec(any::<bool>(), 4), any::<[bool; 3]>()),
        0..12,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(slot, idx, bits, [s, t, h])| Aggregate {
                attested_slot: Slot(slot),
                committee_index: idx,
                bits: Bits(bits),
                claims: ClaimMatch { source: s, target: t, head: h },
            })
            .collect::<Vec<_>>()
    });
    let spec = ChainSpec { slots_per_epoch: 8, ..ChainSpec::default() };
    let params = ScoreParams::new(&spec, RewardWeights::default());
    let mut runner = TestRunner::deterministic();
    let mut non_monotone = 0;
    for _ in 0..1000 {
        let (prior, base, extra) = sample(&mut runner, &(aggregates.clone(), aggregates.clone(), aggregates.clone()));
        let index = update_index(&InclusionIndex::new(), &block(20, prior), &Fixed, &params).map_err(|e| e.to_string())?;
        let small = score_block::<ExactReward>(&block(21, base.clone()), &index, &Fixed, &params).map_err(|e| e.to_string())?;
        let mut more = base;
        more.extend(extra);
        let big = score_block::<ExactReward>(&block(21, more), &index, &Fixed, &params).map_err(|e| e.to_string())?;
        non_monotone += (big.score < small.score) as u32;
    }
    let detail = format!(
        "{}; {total_violations} re-scored blocks with new votes; {non_monotone}/1000 non-monotone",
        parts.join(", ")
    );
    if total_violations == 0 && non_monotone == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 4: ideal network ----

fn report_rows(input: &ReportInput, kind: ReportKind) -> Result<Vec<Vec<String>>, String> {
    clperf_cli::render(&ReportSpec::new(kind), input).map(|t| t.rows).map_err(|e| e.to_string())
}

fn criterion_4() -> Outcome {
    let out = run(&SimConfig::ideal(4, 4, 256, 128)).map_err(|e| e.to_string())?;
    let input = ReportInput::from_run(&out).map_err(|e| e.to_string())?;
    let exact = input.performances.iter().all(|p| p.achieved_reward == p.mer);
    let rewards = report_rows(&input, ReportKind::RewardsByLocation)?;
    let flags = report_rows(&input, ReportKind::MissedFlags)?;
    let blocks = report_rows(&input, ReportKind::MissedBlocks)?;
    let reorgs = report_rows(&input, ReportKind::Reorgs)?;
    let ok = exact
        && rewards.iter().all(|r| r[4] == "100.0")
        && flags.iter().all(|r| r[2..] == ["0.0", "0.0", "0.0"])
        && blocks.iter().all(|r| r[2] == "0")
        && reorgs.iter().all(|r| r[1] == "0")
        && input.reorgs.is_empty();
    let detail = format!(
        "achieved/MER {}%, missed flags {:?}, missed proposals {}, reorgs {}",
        rewards[0][4],
        &flags[0][2..],
        blocks[0][2],
        input.reorgs.len()
    );
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 5 and 6: near versus far ----

struct RegionRun {
    near_pct: f64,
    far_pct: f64,
    near_head: f64,
    far_head: f64,
    near_reorgs: u64,
    far_reorgs: u64,
    far_late_share: f64,
}

fn region_run(seed: u64) -> Result<RegionRun, String> {
    let out = run(&two_region(seed)).map_err(|e| e.to_string())?;
    let (payloads, _) = simulation_records(&out).map_err(|e| e.to_string())?;
    let perfs: Vec<&Performance> = payloads
        .iter()
        .filter_map(|p| match p {
            Payload::EpochPerformance(e) => Some(e),
            _ => None,
        })
        .collect();
    let rows = aggregate_stats(perfs.into_iter(), GroupBy::Location).map_err(|e| e.to_string())?;
    let row = |g: &str| rows.iter().find(|r| r.group == g).cloned().ok_or(format!("no {g} row"));
    let (near, far) = (row("near")?, row("far")?);
    let reorgs: Vec<_> = payloads
        .iter()
        .filter_map(|p| match p {
            Payload::Reorg(r) => Some(r),
            _ => None,
        })
        .collect();
    let summary = reorg_stats(reorgs, GroupBy::Location, &["near".into(), "far".into()]);
    let count = |g: &str| summary.groups.iter().find(|r| r.group == g).map_or(0, |r| r.count);
    let far_offsets: Vec<u64> = payloads
        .iter()
        .filter_map(|p| match p {
            Payload::Arrival(a) if a.kind == EventKind::Block && a.node.location == "far" => Some(a.arrival_offset_ms),
            _ => None,
        })
        .collect();
    Ok(RegionRun {
        near_pct: near.achieved_pct.unwrap_or(0.0),
        far_pct: far.achieved_pct.unwrap_or(0.0),
        near_head: near.missed_head_ratio,
        far_head: far.missed_head_ratio,
        near_reorgs: count("near"),
        far_reorgs: count("far"),
        far_late_share: far_offsets.iter().filter(|&&o| o > 4000).count() as f64 / far_offsets.len() as f64,
    })
}

fn region_runs() -> Result<(Vec<RegionRun>, Duration), String> {
    let started = Instant::now();
    let seeds: Vec<u64> = (1..=20).collect();
    let results: Vec<Result<RegionRun, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(5)
            .map(|chunk| s.spawn(move || chunk.iter().map(|&seed| region_run(seed)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker")).collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok((runs, started.elapsed()))
}

fn criterion_5(runs: &[RegionRun], elapsed: Duration) -> Outcome {
    let ordered = runs.iter().filter(|r| r.far_pct < r.near_pct && r.far_head > r.near_head).count();
    let tail = runs.iter().map(|r| r.far_late_share).fold(f64::INFINITY, f64::min);
    let mean = |f: fn(&RegionRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let detail = format!(
        "{ordered}/20 seeds ordered; achieved/MER near {:.1}% far {:.1}%; missed head near {:.1}% far {:.1}%; \
         far arrivals over 4 s at least {:.1}%; {elapsed:.1?} for 20 runs",
        mean(|r| r.near_pct),
        mean(|r| r.far_pct),
        mean(|r| r.near_head * 100.0),
        mean(|r| r.far_head * 100.0),
        tail * 100.0
    );
    if ordered >= 19 && tail >= 0.10 && elapsed < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6(runs: &[RegionRun]) -> Outcome {
    let ordered = runs.iter().filter(|r| r.far_reorgs >= r.near_reorgs).count();
    let near: u64 = runs.iter().map(|r| r.near_reorgs).sum();
    let far: u64 = runs.iter().map(|r| r.far_reorgs).sum();
    let detail = format!("{ordered}/20 seeds with far >= near; reorgs near {near} far {far} in total");
    if ordered >= 19 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 7: CDF ----

/// Smallest sample value whose share of values at or below it reaches `p` percent.
fn percentile_by_definition(values: &[u64], p: u32) -> u64 {
    let n = values.len() as u64;
    let mut candidates = values.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    *candidates
        .iter()
        .find(|&&v| values.iter().filter(|&&x| x <= v).count() as u64 * 100 >= p as u64 * n)
        .expect("the maximum always qualifies")
}

fn criterion_7() -> Outcome {
    let mut runner = TestRunner::deterministic();
    let samples = prop::collection::vec(0u64..20_000, 1..300);
    let mut mismatches = 0;
    let mut check = |values: &[u64]| {
        let cdf = latency_cdf(values.iter().copied()).expect("non-empty");
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        for p in REPORTED_PERCENTILES {
            let expected = percentile_by_definition(values, p);
            mismatches += (cdf.at(p) != Some(expected)) as u32;
            mismatches += (nearest_rank(&sorted, p) != Some(expected)) as u32;
        }
    };
    for _ in 0..1000 {
        check(&sample(&mut runner, &samples));
    }
    check(&sample(&mut runner, &prop::collection::vec(0u64..20_000, 1000)));

    let out = run(&preset()).map_err(|e| e.to_string())?;
    let input = ReportInput::from_run(&out).map_err(|e| e.to_string())?;
    let rows = report_rows(&input, ReportKind::ArrivalCdf)?;
    let median = |loc: &str| -> Result<f64, String> {
        rows.iter()
            .find(|r| r[0] == loc && r[1] == "50")
            .and_then(|r| r[2].parse().ok())
            .ok_or(format!("no median for {loc}"))
    };
    let (hel, lon) = (median("helsinki")?, median("london")?);
    let within = |got: f64, want: f64| (got - want).abs() <= want * 0.10;
    let detail = format!(
        "1001 sample sets, {mismatches} mismatches; preset medians helsinki {hel} ms (1440), london {lon} ms (2180)"
    );
    if mismatches == 0 && within(hel, 1440.0) && within(lon, 2180.0) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 8: telemetry conservation ----

fn criterion_8() -> Outcome {
    let out = run(&fixture_scenario()).map_err(|e| e.to_string())?;
    let (payloads, rejected) = simulation_records(&out).map_err(|e| e.to_string())?;
    let arrivals = payloads.iter().filter(|p| matches!(p, Payload::Arrival(_))).count() as u64;
    let emitted: u64 = out.truth.stream_stats.iter().map(|s| s.emitted).sum();
    let dropped: u64 = out.truth.stream_stats.iter().map(|s| s.dropped).sum();
    let detail = format!("{arrivals} arrival records = {emitted} emitted - {dropped} dropped ({rejected} rejected)");
    if arrivals == emitted - dropped && dropped > 0 && rejected == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 9: golden replay ----

fn criterion_9() -> Outcome {
    let differ = common::golden_mismatches();
    let files = 1 + 2 * ReportKind::ALL.len();
    if differ.is_empty() {
        Ok(format!("replay and {} report kinds byte-identical ({files} files)", ReportKind::ALL.len()))
    } else {
        Err(format!("differ: {}", differ.join(", ")))
    }
}

// ---- 10: determinism ----

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let preset = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/four-regions.cfg");
    let mut logs = Vec::new();
    for name in ["a.log", "b.log"] {
        let path = dir.path().join(name);
        common::stdout_ok(&[
            "simulate",
            preset.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            path.to_str().unwrap(),
        ]);
        logs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    let detail = format!("two simulate runs, {} and {} bytes", logs[0].len(), logs[1].len());
    if logs[0] == logs[1] && !logs[0].is_empty() {
        Ok(format!("{detail}, identical"))
    } else {
        Err(format!("{detail}, different"))
    }
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} [{n:>2}] {name}: {detail}");
        results.push((n, name, outcome));
    };

    report(1, "flag evaluation oracle", criterion_1());
    report(2, "implication chain", criterion_2());
    report(3, "block-score dedup", criterion_3());
    report(4, "ideal-network ceiling", criterion_4());
    match region_runs() {
        Ok((runs, elapsed)) => {
            report(5, "latency-degradation ordering", criterion_5(&runs, elapsed));
            report(6, "reorg ordering", criterion_6(&runs));
        }
        Err(e) => {
            report(5, "latency-degradation ordering", Err(e.clone()));
            report(6, "reorg ordering", Err(e));
        }
    }
    report(7, "CDF correctness", criterion_7());
    report(8, "telemetry conservation", criterion_8());
    report(9, "golden replay", criterion_9());
    report(10, "determinism", criterion_10());
    let elapsed = started.elapsed();
    let budget = if elapsed < Duration::from_secs(600) {
        Ok(format!("suite finished in {elapsed:.1?}"))
    } else {
        Err(format!("suite took {elapsed:.1?}"))
    };
    report(11, "desk-scale budget", budget);

    let failed: Vec<_> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
