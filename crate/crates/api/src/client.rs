use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use clperf_core::{BlockSummary, ChainSpec, CommitteeLookup, EventKind, NodeLabel, Root, Slot, SlotClock, ValidatorId};
use futures::StreamExt;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::schema::{
    spec_from_doc, BlockEventDoc, BlockSummaryDoc, CommitteeDoc, Envelope, ErrorBody, GenesisDoc, HeadEventDoc,
    ReorgEventDoc, SpecDoc, SyncingDoc, VersionedEnvelope,
};
use crate::sse::{SseFrame, SseParser};
use crate::ApiError;

/// Wall-clock milliseconds from a monotone source: never decreases within a process.
pub fn receipt_now_ms() -> i64 {
    static ANCHOR: OnceLock<(i64, Instant)> = OnceLock::new();
    let (wall, at) = ANCHOR.get_or_init(|| {
        let wall = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_millis() as i64;
        (wall, Instant::now())
    });
    wall + at.elapsed().as_millis() as i64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Backoff {
    pub base_ms: u64,
    pub cap_ms: u64,
}

impl Default for Backoff {
    fn default() -> Self {
        Self { base_ms: 500, cap_ms: 30_000 }
    }
}

impl Backoff {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_ms.saturating_mul(1u64.checked_shl(attempt).unwrap_or(u64::MAX));
        Duration::from_millis(ms.min(self.cap_ms))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEndpoint {
    pub base_url: String,
    pub label: NodeLabel,
    pub timeout_ms: u64,
    pub max_retries: u32,
    #[serde(default)]
    pub backoff: Backoff,
}

impl NodeEndpoint {
    pub const DEFAULT_TIMEOUT_MS: u64 = 4000;
    pub const DEFAULT_RETRIES: u32 = 5;

    pub fn new(base_url: impl Into<String>, label: NodeLabel) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            label,
            timeout_ms: Self::DEFAULT_TIMEOUT_MS,
            max_retries: Self::DEFAULT_RETRIES,
            backoff: Backoff::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let l = &self.label;
        if l.node_id.is_empty() || l.location.is_empty() || l.client.is_empty() {
            return Err("node, location and client labels must be non-empty".into());
        }
        if self.timeout_ms == 0 {
            return Err("timeout must be positive".into());
        }
        if !self.base_url.starts_with("http://") && !self.base_url.starts_with("https://") {
            return Err(format!("`{}` is not an http(s) URL", self.base_url));
        }
        Ok(())
    }

    /// Parses `URL NODE_ID LOCATION CLIENT [timeout_ms=N] [retries=N]`.
    pub fn parse_line(line: &str) -> Result<Self, String> {
        let mut parts = line.split_whitespace();
        let mut next = |what: &str| parts.next().ok_or_else(|| format!("missing {what}"));
        let url = next("URL")?;
        let label = NodeLabel::new(next("node id")?, next("location")?, next("client")?);
        let mut ep = NodeEndpoint::new(url, label);
        for opt in parts {
            let (k, v) = opt.split_once('=').ok_or_else(|| format!("expected key=value, got `{opt}`"))?;
            let bad = || format!("bad value for `{k}`: `{v}`");
            match k {
                "timeout_ms" => ep.timeout_ms = v.parse().map_err(|_| bad())?,
                "retries" => ep.max_retries = v.parse().map_err(|_| bad())?,
                "backoff_ms" => ep.backoff.base_ms = v.parse().map_err(|_| bad())?,
                other => return Err(format!("unknown option `{other}`")),
            }
        }
        ep.validate()?;
        Ok(ep)
    }

    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} timeout_ms={} retries={} backoff_ms={}",
            self.base_url,
            self.label.node_id,
            self.label.location,
            self.label.client,
            self.timeout_ms,
            self.max_retries,
            self.backoff.base_ms
        )
    }
}

/// Endpoints file: one endpoint per line, `#` comments and blank lines ignored.
pub fn parse_endpoints(text: &str) -> Result<Vec<NodeEndpoint>, ApiError> {
    let mut out: Vec<NodeEndpoint> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ep = NodeEndpoint::parse_line(line).map_err(|reason| ApiError::InvalidEndpoint { line: i + 1, reason })?;
        if out.iter().any(|e| e.label.node_id == ep.label.node_id) {
            return Err(ApiError::InvalidEndpoint {
                line: i + 1,
                reason: format!("duplicate node id `{}`", ep.label.node_id),
            });
        }
        out.push(ep);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub node: NodeLabel,
    pub kind: EventKind,
    pub slot: Slot,
    pub root: Root,
    pub receipt_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamMessage {
    Event(StreamEvent),
    /// The connection dropped; events may be missing until the next event.
    Gap { node: NodeLabel, at_ms: i64 },
    /// Retries exhausted; the subscription has ended.
    Down { node: NodeLabel, at_ms: i64, reason: String },
    /// A frame that could not be decoded.
    Malformed { node: NodeLabel, at_ms: i64, detail: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum Unavailability {
    OutOfSync,
    Timeout,
    ProtocolError(String),
    EndpointDown(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Production {
    Block(BlockSummary),
    Unavailable(Unavailability),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncStatus {
    pub is_syncing: bool,
    pub head_slot: Slot,
    pub sync_distance: u64,
}

/// Committees of one or more epochs, as served by a node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommitteeSet {
    committees: BTreeMap<(u64, u64), Vec<ValidatorId>>,
}

impl CommitteeSet {
    pub fn extend(&mut self, docs: Vec<CommitteeDoc>) {
        for d in docs {
            self.committees
                .insert((d.slot, d.index), d.validators.into_iter().map(ValidatorId).collect());
        }
    }

    pub fn has_slot(&self, slot: Slot) -> bool {
        self.committees.range((slot.0, 0)..=(slot.0, u64::MAX)).next().is_some()
    }

    /// Drops committees of slots before `slot`.
    pub fn prune_before(&mut self, slot: Slot) {
        self.committees = self.committees.split_off(&(slot.0, 0));
    }
}

impl CommitteeLookup for CommitteeSet {
    fn committee(&self, slot: Slot, index: u64) -> Option<&[ValidatorId]> {
        self.committees.get(&(slot.0, index)).map(Vec::as_slice)
    }
}

/// Request-response client for one beacon node.
#[derive(Clone, Debug)]
pub struct BeaconClient {
    http: reqwest::Client,
    endpoint: NodeEndpoint,
}

impl BeaconClient {
    pub fn new(endpoint: NodeEndpoint) -> Result<Self, ApiError> {
        endpoint.validate().map_err(|reason| ApiError::InvalidEndpoint { line: 0, reason })?;
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()?;
        Ok(Self { http, endpoint })
    }

    pub fn endpoint(&self) -> &NodeEndpoint {
        &self.endpoint
    }

    pub fn label(&self) -> &NodeLabel {
        &self.endpoint.label
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url, path)
    }

    async fn get_json<T: DeserializeOwned>(&self, path: &str, timeout: Duration) -> Result<T, ApiError> {
        let fut = async {
            let resp = self.http.get(self.url(path)).send().await?;
            let status = resp.status();
            let body = resp.bytes().await?;
            if !status.is_success() {
                return Err(status_error(status, &body));
            }
            serde_json::from_slice(&body).map_err(|e| ApiError::Protocol(format!("{path}: {e}")))
        };
        match tokio::time::timeout(timeout, fut).await {
            Ok(r) => r,
            Err(_) => Err(ApiError::Timeout),
        }
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.endpoint.timeout_ms)
    }

    pub async fn get_genesis(&self) -> Result<GenesisDoc, ApiError> {
        Ok(self.get_json::<Envelope<GenesisDoc>>("/eth/v1/beacon/genesis", self.timeout()).await?.data)
    }

    /// Protocol constants and the wall duration of a slot in ms.
    pub async fn get_spec(&self) -> Result<(ChainSpec, u64), ApiError> {
        let doc = self.get_json::<Envelope<SpecDoc>>("/eth/v1/config/spec", self.timeout()).await?.data;
        spec_from_doc(&doc).map_err(ApiError::Protocol)
    }

    /// Spec plus a slot clock anchored at the node's genesis.
    pub async fn chain_clock(&self) -> Result<(ChainSpec, SlotClock), ApiError> {
        let genesis = self.get_genesis().await?;
        let (mut spec, wall_ms_per_slot) = self.get_spec().await?;
        spec.genesis_time = genesis.genesis_time;
        let clock = SlotClock {
            genesis_ms: genesis.genesis_ms(),
            ms_per_slot: wall_ms_per_slot,
            protocol_ms_per_slot: spec.ms_per_slot(),
            tolerance_ms: SlotClock::DEFAULT_TOLERANCE_MS,
        };
        Ok((spec, clock))
    }

    /// A timeout means the node is unreachable.
    pub async fn get_sync_status(&self) -> Result<SyncStatus, ApiError> {
        match self.get_json::<Envelope<SyncingDoc>>("/eth/v1/node/syncing", self.timeout()).await {
            Ok(Envelope { data }) => Ok(SyncStatus {
                is_syncing: data.is_syncing,
                head_slot: Slot(data.head_slot),
                sync_distance: data.sync_distance,
            }),
            Err(ApiError::Timeout) | Err(ApiError::Http(_)) => Err(ApiError::EndpointDown {
                node: self.endpoint.label.node_id.clone(),
                reason: "no answer to sync status".into(),
            }),
            Err(e) => Err(e),
        }
    }

    pub async fn get_committees(&self, epoch: u64) -> Result<Vec<CommitteeDoc>, ApiError> {
        let path = format!("/eth/v1/beacon/states/head/committees?epoch={epoch}");
        Ok(self.get_json::<Envelope<Vec<CommitteeDoc>>>(&path, self.timeout()).await?.data)
    }

    /// Canonical block summary at `slot`, `None` for an empty or unknown slot.
    pub async fn get_block(&self, slot: Slot) -> Result<Option<BlockSummary>, ApiError> {
        let path = format!("/eth/v2/beacon/blocks/{}?summary=true", slot.0);
        match self.get_json::<VersionedEnvelope<BlockSummaryDoc>>(&path, self.timeout()).await {
            Ok(env) => Ok(Some(env.data.into_summary(self.endpoint.label.clone()))),
            Err(ApiError::Status { code: 404, .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Asks the node for a block at `slot`. Anything not answered by `deadline` is a
    /// timeout.
    pub async fn request_block_production(&self, slot: Slot, deadline: Instant) -> Production {
        let budget = deadline.saturating_duration_since(Instant::now()).min(self.timeout());
        let path = format!("/eth/v2/validator/blocks/{}?summary=true", slot.0);
        let result = self.get_json::<VersionedEnvelope<BlockSummaryDoc>>(&path, budget).await;
        if Instant::now() > deadline {
            return Production::Unavailable(Unavailability::Timeout);
        }
        match result {
            Ok(env) if env.data.slot == slot.0 => Production::Block(env.data.into_summary(self.endpoint.label.clone())),
            Ok(env) => Production::Unavailable(Unavailability::ProtocolError(format!(
                "asked for slot {} got {}",
                slot.0, env.data.slot
            ))),
            Err(ApiError::Status { code: 503, .. }) => Production::Unavailable(Unavailability::OutOfSync),
            Err(ApiError::Timeout) => Production::Unavailable(Unavailability::Timeout),
            Err(ApiError::Http(e)) => Production::Unavailable(Unavailability::EndpointDown(e.to_string())),
            Err(e) => Production::Unavailable(Unavailability::ProtocolError(e.to_string())),
        }
    }
}

fn status_error(status: StatusCode, body: &[u8]) -> ApiError {
    let message = serde_json::from_slice::<ErrorBody>(body)
        .map(|b| b.message)
        .unwrap_or_else(|_| String::from_utf8_lossy(body).into_owned());
    ApiError::Status {
        code: status.as_u16(),
        message,
    }
}

fn decode(node: &NodeLabel, frame: &SseFrame, receipt_ms: i64) -> Result<Option<StreamEvent>, String> {
    let Some(kind) = EventKind::from_topic(&frame.event) else {
        return Ok(None);
    };
    let err = |e: serde_json::Error| format!("{} event: {e}", frame.event);
    let (slot, root, depth) = match kind {
        EventKind::Block => {
            let d: BlockEventDoc = serde_json::from_str(&frame.data).map_err(err)?;
            (d.slot, d.block, None)
        }
        EventKind::Head => {
            let d: HeadEventDoc = serde_json::from_str(&frame.data).map_err(err)?;
            (d.slot, d.block, None)
        }
        EventKind::ChainReorg => {
            let d: ReorgEventDoc = serde_json::from_str(&frame.data).map_err(err)?;
            (d.slot, d.new_head_block, d.depth)
        }
    };
    Ok(Some(StreamEvent {
        node: node.clone(),
        kind,
        slot: Slot(slot),
        root,
        receipt_ms,
        depth,
    }))
}

/// Follows the node's event stream until retries run out or `tx` closes.
///
/// Every chunk is timestamped as soon as it is read, before parsing. A dropped
/// connection emits one [`StreamMessage::Gap`], then reconnects with exponential
/// backoff, resuming after the last seen event id.
pub async fn subscribe_events(endpoint: NodeEndpoint, kinds: &[EventKind], tx: mpsc::UnboundedSender<StreamMessage>) {
    let http = match reqwest::Client::builder()
        .connect_timeout(Duration::from_millis(endpoint.timeout_ms))
        .build()
    {
        Ok(h) => h,
        Err(e) => {
            let _ = tx.send(StreamMessage::Down {
                node: endpoint.label.clone(),
                at_ms: receipt_now_ms(),
                reason: e.to_string(),
            });
            return;
        }
    };
    let topics: Vec<&str> = kinds.iter().map(|k| k.topic()).collect();
    let url = format!("{}/eth/v1/events?topics={}", endpoint.base_url, topics.join(","));
    let node = endpoint.label.clone();
    let mut last_id: Option<String> = None;
    let mut attempt = 0u32;
    let mut last_error: String;
    loop {
        let mut req = http.get(&url).header("accept", "text/event-stream");
        if let Some(id) = &last_id {
            req = req.header("last-event-id", id.as_str());
        }
        match req.send().await {
            Ok(resp) if resp.status().is_success() => {
                attempt = 0;
                let mut parser = SseParser::new();
                let mut body = resp.bytes_stream();
                while let Some(chunk) = body.next().await {
                    let receipt_ms = receipt_now_ms();
                    let Ok(chunk) = chunk else { break };
                    for frame in parser.push(&chunk) {
                        if frame.id.is_some() {
                            last_id.clone_from(&frame.id);
                        }
                        let msg = match decode(&node, &frame, receipt_ms) {
                            Ok(Some(ev)) => StreamMessage::Event(ev),
                            Ok(None) => continue,
                            Err(detail) => StreamMessage::Malformed {
                                node: node.clone(),
                                at_ms: receipt_ms,
                                detail,
                            },
                        };
                        if tx.send(msg).is_err() {
                            return;
                        }
                    }
                }
                if tx
                    .send(StreamMessage::Gap {
                        node: node.clone(),
                        at_ms: receipt_now_ms(),
                    })
                    .is_err()
                {
                    return;
                }
                last_error = "stream closed".into();
            }
            Ok(resp) => last_error = format!("status {}", resp.status()),
            Err(e) => last_error = e.to_string(),
        }
        if attempt >= endpoint.max_retries {
            let _ = tx.send(StreamMessage::Down {
                node,
                at_ms: receipt_now_ms(),
                reason: format!("{} retries exhausted: {last_error}", endpoint.max_retries),
            });
            return;
        }
        tokio::time::sleep(endpoint.backoff.delay(attempt)).await;
        attempt += 1;
        if tx.is_closed() {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_to_cap() {
        let b = Backoff::default();
        let ms: Vec<u64> = (0..9).map(|a| b.delay(a).as_millis() as u64).collect();
        assert_eq!(ms, [500, 1000, 2000, 4000, 8000, 16000, 30000, 30000, 30000]);
        assert_eq!(b.delay(200).as_millis(), 30000);
    }

    #[test]
    fn endpoint_lines() {
        let eps = parse_endpoints(
            "# nodes\nhttp://127.0.0.1:5052/ hel-lh helsinki lighthouse\n\nhttp://10.0.0.2:5052 syd-pr sydney prysm timeout_ms=2000 retries=2\n",
        )
        .unwrap();
        assert_eq!(eps.len(), 2);
        assert_eq!(eps[0].base_url, "http://127.0.0.1:5052");
        assert_eq!(eps[1].timeout_ms, 2000);
        assert_eq!(eps[1].max_retries, 2);
        assert_eq!(parse_endpoints(&eps[1].to_line()).unwrap()[0], eps[1]);
        assert!(matches!(
            parse_endpoints("http://a x y\n"),
            Err(ApiError::InvalidEndpoint { line: 1, .. })
        ));
        assert!(parse_endpoints("http://a n l c timeout_ms=0").is_err());
        assert!(parse_endpoints("http://a n l c\nhttp://b n l c").is_err());
    }
}
