use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};

use crate::error::{EngineError, ErrorKind, Result};

/// Outbound HTTP-style POSTs from the engine to brokers.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, body: &serde_json::Value) -> Result<()>;
}

fn unreachable(url: &str, why: impl std::fmt::Display) -> EngineError {
    EngineError::new(ErrorKind::BrokerUnreachable, format!("POST {url}: {why}"))
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        HttpTransport { agent: ureq::AgentBuilder::new().timeout(timeout).build() }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport::new(Duration::from_secs(5))
    }
}

impl Transport for HttpTransport {
    fn post(&self, url: &str, body: &serde_json::Value) -> Result<()> {
        self.agent.post(url).send_json(body.clone()).map(|_| ()).map_err(|e| unreachable(url, e))
    }
}

type Handler = Arc<dyn Fn(&str, &serde_json::Value) -> Result<()> + Send + Sync>;

/// In-process transport: URLs are routed to handlers by endpoint prefix.
/// Every attempted POST is recorded, including failed ones.
#[derive(Default)]
pub struct MemoryTransport {
    routes: RwLock<Vec<(String, Handler)>>,
    down: RwLock<HashSet<String>>,
    sent: Mutex<Vec<(String, serde_json::Value)>>,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Routes `<endpoint>/<path>` to `handler(path, body)`.
    pub fn route(&self, endpoint: &str, handler: impl Fn(&str, &serde_json::Value) -> Result<()> + Send + Sync + 'static) {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let mut routes = self.routes.write();
        routes.retain(|(e, _)| *e != endpoint);
        routes.push((endpoint, Arc::new(handler)));
    }

    /// Simulates an outage of one endpoint.
    pub fn set_down(&self, endpoint: &str, down: bool) {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        if down {
            self.down.write().insert(endpoint);
        } else {
            self.down.write().remove(&endpoint);
        }
    }

    pub fn sent(&self) -> Vec<(String, serde_json::Value)> {
        self.sent.lock().clone()
    }

    pub fn clear(&self) {
        self.sent.lock().clear();
    }
}

impl Transport for MemoryTransport {
    fn post(&self, url: &str, body: &serde_json::Value) -> Result<()> {
        self.sent.lock().push((url.to_string(), body.clone()));
        let handler = {
            let routes = self.routes.read();
            routes
                .iter()
                .filter(|(e, _)| url.starts_with(e.as_str()) && url[e.len()..].starts_with('/'))
                .max_by_key(|(e, _)| e.len())
                .map(|(e, h)| (e.clone(), h.clone()))
        };
        let Some((endpoint, handler)) = handler else { return Err(unreachable(url, "no route")) };
        if self.down.read().contains(&endpoint) {
            return Err(unreachable(url, "endpoint down"));
        }
        handler(&url[endpoint.len()..], body)
    }
}
