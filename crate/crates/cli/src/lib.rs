//! Record log, ingestion, reports and the pieces behind the `clperf` command.
//!
//! Data flows one way: a source (simulation, live collection, or another log) is
//! ingested into an append-only [`record`] log, and [`report`] renders tables from a
//! log or directly from a simulation run.

pub mod collect;
pub mod export;
pub mod ingest;
pub mod record;
pub mod report;

pub use ingest::{replay_into, simulation_records, write_simulation, IngestSummary};
pub use record::{append_to, read_log, LogContents, LogError, Payload, Record, RecordWriter};
pub use report::{render, ReportFormat, ReportInput, ReportKind, ReportSpec, Table};

/// Failures sorted by exit code: configuration problems exit 2, bad or missing data 3.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<LogError> for CliError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Io { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
