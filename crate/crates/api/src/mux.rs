use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use clperf_core::{NodeLabel, Slot};
use futures::future::{join_all, BoxFuture, FutureExt, Shared};

use crate::client::{BeaconClient, NodeEndpoint, Production};
use crate::ApiError;

type InFlight = Shared<BoxFuture<'static, Production>>;

/// Block-production fan-out over many nodes. Concurrent requests for the same
/// (node, slot) share one HTTP request.
#[derive(Clone)]
pub struct Multiplexer {
    clients: Vec<BeaconClient>,
    inflight: Arc<Mutex<HashMap<(usize, u64), InFlight>>>,
}

impl Multiplexer {
    pub fn new(endpoints: Vec<NodeEndpoint>) -> Result<Self, ApiError> {
        Ok(Self {
            clients: endpoints.into_iter().map(BeaconClient::new).collect::<Result<_, _>>()?,
            inflight: Arc::default(),
        })
    }

    pub fn clients(&self) -> &[BeaconClient] {
        &self.clients
    }

    pub fn request(&self, node: usize, slot: Slot, deadline: Instant) -> impl std::future::Future<Output = Production> {
        let key = (node, slot.0);
        let shared = {
            let mut map = self.inflight.lock().expect("in-flight map poisoned");
            map.entry(key)
                .or_insert_with(|| {
                    let client = self.clients[node].clone();
                    let inflight = Arc::clone(&self.inflight);
                    async move {
                        let out = client.request_block_production(slot, deadline).await;
                        inflight.lock().expect("in-flight map poisoned").remove(&key);
                        out
                    }
                    .boxed()
                    .shared()
                })
                .clone()
        };
        shared
    }

    /// Requests a block from every node at once and waits for all of them, each bounded
    /// by `deadline`.
    pub async fn fan_out(&self, slot: Slot, deadline: Instant) -> Vec<(NodeLabel, Production)> {
        let answers = join_all((0..self.clients.len()).map(|i| self.request(i, slot, deadline))).await;
        self.clients.iter().map(|c| c.label().clone()).zip(answers).collect()
    }
}
