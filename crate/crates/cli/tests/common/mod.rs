#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clperf_cli::ReportKind;

/// Set to rewrite the golden log and outputs from the fixture scenario.
pub const REGENERATE_VAR: &str = "CLPERF_REGENERATE_GOLDEN";
pub const GOLDEN_RUN: &str = "fixture";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn clperf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clperf"))
        .args(args)
        .env_remove("CLPERF_LOG_DIR")
        .output()
        .expect("binary runs")
}

pub fn stdout_ok(args: &[&str]) -> String {
    let out = clperf(args);
    assert!(
        out.status.success(),
        "clperf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn golden_outputs(log: &Path, scratch: &Path) -> Vec<(String, String)> {
    let log = log.to_str().unwrap();
    let mut out = vec![("replay.txt".to_string(), stdout_ok(&["replay", "--log", log, "--verify"]))];
    for kind in ReportKind::ALL {
        let csv = scratch.join(format!("{kind}.csv"));
        let text = stdout_ok(&["report", "--kind", kind.name(), "--log", log, "--csv", csv.to_str().unwrap()]);
        out.push((format!("{kind}.txt"), text));
        out.push((format!("{kind}.csv"), std::fs::read_to_string(&csv).unwrap()));
    }
    out
}

/// Replays the bundled log, renders every report kind and compares with the
/// committed outputs. Returns the files that differ.
pub fn golden_mismatches() -> Vec<String> {
    let dir = fixtures();
    let log = dir.join("golden.jsonl");
    let golden = dir.join("golden");
    let scratch = tempfile::tempdir().unwrap();
    if std::env::var_os(REGENERATE_VAR).is_some() {
        let _ = std::fs::remove_file(&log);
        let scenario = dir.join("scenario.toml");
        stdout_ok(&[
            "simulate",
            scenario.to_str().unwrap(),
            "--out",
            log.to_str().unwrap(),
            "--run",
            GOLDEN_RUN,
        ]);
        let contents = clperf_cli::read_log(&log, true).unwrap();
        let manifest = serde_json::json!({
            "run": GOLDEN_RUN,
            "records": contents.records.len(),
            "counts": contents.counts(),
            "last_hash": contents.last_hash,
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap() + "\n").unwrap();
        std::fs::create_dir_all(&golden).unwrap();
        for (name, text) in golden_outputs(&log, scratch.path()) {
            std::fs::write(golden.join(name), text).unwrap();
        }
    }
    golden_outputs(&log, scratch.path())
        .into_iter()
        .filter(|(name, text)| std::fs::read_to_string(golden.join(name)).ok().as_deref() != Some(text.as_str()))
        .map(|(name, _)| name)
        .collect()
}
