//! Client for the beacon node HTTP API subset used by the measurement pipeline, and a
//! server exposing simulated nodes through the same API.
//!
//! Paths follow the standard beacon API:
//!
//! | path | use |
//! |---|---|
//! | `/eth/v1/events?topics=block,head,chain_reorg` | event stream (server-sent events) |
//! | `/eth/v1/node/syncing` | sync status |
//! | `/eth/v2/validator/blocks/{slot}?summary=true` | block production, summary document |
//! | `/eth/v2/beacon/blocks/{slot}?summary=true` | canonical block, summary document |
//! | `/eth/v1/beacon/genesis`, `/eth/v1/config/spec` | slot clock |
//! | `/eth/v1/beacon/states/head/committees?epoch=E` | committees for scoring |
//!
//! The simulator adds two fields real nodes do not serve: `genesis_time_ms` in the
//! genesis document and `SIM_MILLIS_PER_SLOT` in the spec, so a collector can follow a
//! time-scaled run. Against a real node both are absent and the defaults apply.

pub mod client;
pub mod mux;
pub mod schema;
pub mod server;
pub mod sse;

pub use client::{
    parse_endpoints, receipt_now_ms, subscribe_events, Backoff, BeaconClient, CommitteeSet, NodeEndpoint,
    Production, StreamEvent, StreamMessage, SyncStatus, Unavailability,
};
pub use mux::Multiplexer;
pub use server::{ServedNode, SimClock, SimNetwork};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("status {code}: {message}")]
    Status { code: u16, message: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint {node} is down: {reason}")]
    EndpointDown { node: String, reason: String },
    #[error("endpoints line {line}: {reason}")]
    InvalidEndpoint { line: usize, reason: String },
}
