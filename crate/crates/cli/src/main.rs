use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use clperf_api::{parse_endpoints, SimClock, SimNetwork};
use clperf_cli::collect::collect;
use clperf_cli::export::export_csv;
use clperf_cli::{
    append_to, read_log, render, replay_into, write_simulation, CliError, LogContents, LogError, ReportFormat, ReportInput,
    ReportKind, ReportSpec,
};
use clperf_core::{GroupBy, Slot};
use clperf_sim::SimConfig;

/// Directory for logs written without an explicit `--out`.
const LOG_DIR_VAR: &str = "CLPERF_LOG_DIR";

#[derive(Parser)]
#[command(name = "clperf", version, about = "Consensus-layer performance measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario through the simulator and append its records to a log.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `<run>.log` in $CLPERF_LOG_DIR or the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run label; defaults to `<scenario>-seed<seed>`.
        #[arg(long)]
        run: Option<String>,
    },
    /// Follow live beacon nodes and append what they report to a log.
    Collect {
        /// One endpoint per line: URL NODE_ID LOCATION CLIENT [timeout_ms=N] [retries=N] [backoff_ms=N]
        #[arg(long)]
        endpoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        duration: u64,
        #[arg(long)]
        run: Option<String>,
    },
    /// Block candidate scores per node.
    Score {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        run: Option<String>,
    },
    /// Achieved rewards against the maximum extractable reward.
    Rewards {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "location")]
        group: GroupBy,
        #[arg(long)]
        run: Option<String>,
    },
    /// Render one report from a log.
    Report {
        #[arg(long)]
        kind: ReportKind,
        #[arg(long)]
        log: PathBuf,
        /// Also write the report as CSV to this path.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        group: Option<GroupBy>,
        #[arg(long)]
        from_slot: Option<u64>,
        #[arg(long)]
        to_slot: Option<u64>,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
        #[arg(long)]
        run: Option<String>,
    },
    /// Read a log back, optionally checking its hash chain and copying it into another log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        verify: bool,
        /// Append records missing from this log; copying twice adds nothing.
        #[arg(long)]
        into: Option<PathBuf>,
    },
    /// Serve a simulated run over the beacon API, one loopback port per node.
    Serve {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Wall-clock length of a slot; shorter than 12000 plays the run faster.
        #[arg(long, default_value_t = 12_000)]
        wall_ms_per_slot: u64,
        #[arg(long)]
        base_port: Option<u16>,
        /// Write an endpoints file for `collect`.
        #[arg(long)]
        endpoints_out: Option<PathBuf>,
        /// Delay before genesis.
        #[arg(long, default_value_t = 2000)]
        lead_ms: u64,
    },
    /// Write one CSV file per record type.
    Export {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<SimConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = SimConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn open_for_run(path: &Path, run: &str) -> Result<(clperf_cli::RecordWriter<std::io::BufWriter<std::fs::File>>, LogContents), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    }
    let (writer, existing) = append_to(path)?;
    if existing.runs().iter().any(|r| r == run) {
        return Err(CliError::Config(format!(
            "{} already holds run `{run}`; pick another label with --run",
            path.display()
        )));
    }
    Ok((writer, existing))
}

fn print_report(kind: ReportKind, log: &Path, run: Option<&str>, group: Option<GroupBy>) -> Result<(), CliError> {
    let contents = read_log(log, false)?;
    let input = ReportInput::from_records(&contents.records, run)?;
    let mut spec = ReportSpec::new(kind);
    spec.group_by = group;
    print!("{}", render(&spec, &input)?.to_text());
    Ok(())
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { scenario, seed, out, run } => {
            let cfg = load_scenario(&scenario, seed)?;
            let stem = scenario.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
            let run = run.unwrap_or_else(|| format!("{stem}-seed{}", cfg.seed));
            let out = out.unwrap_or_else(|| {
                let dir = std::env::var_os(LOG_DIR_VAR).map_or_else(|| PathBuf::from("."), PathBuf::from);
                dir.join(format!("{run}.log"))
            });
            let output = clperf_sim::run(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
            let (mut writer, _) = open_for_run(&out, &run)?;
            let summary = write_simulation(&output, &run, &mut writer)?;
            writer.into_inner().context("flushing log")?;
            println!("run {run} -> {}", out.display());
            print!("{summary}");
        }
        Command::Collect { endpoints, out, duration, run } => {
            let text = std::fs::read_to_string(&endpoints)
                .map_err(|e| CliError::Config(format!("{}: {e}", endpoints.display())))?;
            let endpoints = parse_endpoints(&text).map_err(|e| CliError::Config(e.to_string()))?;
            let run = run.unwrap_or_else(|| format!("collect-{}", clperf_api::receipt_now_ms()));
            // fail on a bad log before spending the collection window
            drop(open_for_run(&out, &run)?);
            let (payloads, summary) = collect(endpoints, duration).await?;
            let (mut writer, _) = open_for_run(&out, &run)?;
            for p in payloads {
                writer.write(&run, None, p).context("writing log")?;
            }
            writer.into_inner().context("flushing log")?;
            println!("run {run} -> {}", out.display());
            print!("{summary}");
        }
        Command::Score { log, run } => print_report(ReportKind::BlockScores, &log, run.as_deref(), Some(GroupBy::Node))?,
        Command::Rewards { log, group, run } => {
            print_report(ReportKind::RewardsByLocation, &log, run.as_deref(), Some(group))?
        }
        Command::Report { kind, log, csv, group, from_slot, to_slot, format, run } => {
            let contents = read_log(&log, false)?;
            let input = ReportInput::from_records(&contents.records, run.as_deref())?;
            let spec = ReportSpec {
                kind,
                group_by: group,
                from_slot: from_slot.map(Slot),
                to_slot: to_slot.map(Slot),
                format,
            };
            let table = render(&spec, &input)?;
            print!("{}", table.format(format));
            if let Some(path) = csv {
                std::fs::write(&path, table.to_csv()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Replay { log, verify, into } => {
            let source = read_log(&log, verify)?;
            match into {
                Some(dest) => {
                    let (mut writer, existing) = append_to(&dest)?;
                    let summary = replay_into(&source, &existing, &mut writer).context("writing log")?;
                    writer.into_inner().context("flushing log")?;
                    println!("{} -> {}", log.display(), dest.display());
                    print!("{summary}");
                }
                None => {
                    for (kind, n) in source.counts() {
                        println!("{kind:<18} {n}");
                    }
                    if verify {
                        println!("hash chain intact over {} records", source.records.len());
                    }
                }
            }
        }
        Command::Serve { scenario, seed, wall_ms_per_slot, base_port, endpoints_out, lead_ms } => {
            let cfg = load_scenario(&scenario, seed)?;
            if wall_ms_per_slot == 0 {
                return Err(CliError::Config("--wall-ms-per-slot must be positive".into()).into());
            }
            let output = clperf_sim::run(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
            let clock = SimClock::starting_in(lead_ms, wall_ms_per_slot, output.truth.spec.ms_per_slot());
            let net = SimNetwork::start_on(Arc::new(output), clock, base_port)
                .await
                .map_err(|e| CliError::Config(format!("binding ports: {e}")))?;
            let lines: String = net.endpoints().iter().map(|e| e.to_line() + "\n").collect();
            if let Some(path) = endpoints_out {
                std::fs::write(&path, &lines).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            }
            print!("{lines}");
            tokio::select! {
                _ = net.join() => {}
                _ = tokio::signal::ctrl_c() => {}
            }
        }
        Command::Export { log, dir } => {
            let contents = read_log(&log, false)?;
            let files = export_csv(&contents.records, &dir).map_err(|e| CliError::Config(e.to_string()))?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match (e.downcast_ref::<CliError>(), e.downcast_ref::<LogError>()) {
                (Some(c), _) => c.exit_code(),
                (None, Some(LogError::Io { .. })) => 2,
                (None, Some(_)) => 3,
                (None, None) => 1,
            };
            ExitCode::from(code as u8)
        }
    }
}
