use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{join_url, NotifyMessage, ResultsMessage};
use crate::error::{EngineError, ErrorKind, Result};

/// Where a lazy broker pulls persisted results from.
pub trait ResultSource: Send + Sync {
    fn pull(&self, channel: &str, execution_time: &str, subscription_id: &str) -> Result<Vec<serde_json::Value>>;
}

/// One result handed to a subscriber sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Delivery {
    pub channel: String,
    pub execution_time: String,
    pub result: serde_json::Value,
}

#[derive(Debug, Default)]
struct Sink {
    online: bool,
    log: Vec<Delivery>,
    backlog: Vec<Delivery>,
    /// Execution time of the last delivery handed over.
    ack: Option<String>,
}

#[derive(Debug, Default)]
struct State {
    sinks: BTreeMap<String, Sink>,
    pings: VecDeque<NotifyMessage>,
    parked: Vec<NotifyMessage>,
    skipped: u64,
    pulls: u64,
}

/// Single-process broker: forwards pushed results to sinks and turns
/// availability pings into pulls.
pub struct ReferenceBroker {
    name: String,
    state: Mutex<State>,
    source: RwLock<Option<Arc<dyn ResultSource>>>,
    backoff: Duration,
}

impl ReferenceBroker {
    pub fn new(name: &str) -> Self {
        ReferenceBroker {
            name: name.to_string(),
            state: Mutex::new(State::default()),
            source: RwLock::new(None),
            backoff: Duration::from_millis(5),
        }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_source(&self, source: Arc<dyn ResultSource>) {
        *self.source.write() = Some(source);
    }

    pub fn register_sink(&self, subscription_id: &str) {
        self.state.lock().sinks.entry(subscription_id.to_string()).or_insert_with(|| Sink { online: true, ..Sink::default() });
    }

    /// Takes a sink offline or back online. Reconnecting flushes whatever
    /// arrived while it was away.
    pub fn set_online(&self, subscription_id: &str, online: bool) {
        let mut st = self.state.lock();
        if let Some(sink) = st.sinks.get_mut(subscription_id) {
            sink.online = online;
            if online {
                let backlog = std::mem::take(&mut sink.backlog);
                sink.log.extend(backlog);
            }
        }
    }

    pub fn log(&self, subscription_id: &str) -> Vec<Delivery> {
        self.state.lock().sinks.get(subscription_id).map(|s| s.log.clone()).unwrap_or_default()
    }

    pub fn sink_ids(&self) -> Vec<String> {
        self.state.lock().sinks.keys().cloned().collect()
    }

    pub fn parked(&self) -> Vec<NotifyMessage> {
        self.state.lock().parked.clone()
    }

    pub fn skipped(&self) -> u64 {
        self.state.lock().skipped
    }

    pub fn pulls(&self) -> u64 {
        self.state.lock().pulls
    }

    fn deliver(st: &mut State, subscription_id: &str, delivery: Delivery) -> bool {
        let Some(sink) = st.sinks.get_mut(subscription_id) else {
            log::debug!("no sink for subscription {subscription_id}");
            st.skipped += 1;
            return false;
        };
        sink.ack = Some(delivery.execution_time.clone());
        if sink.online {
            sink.log.push(delivery);
        } else {
            sink.backlog.push(delivery);
        }
        true
    }

    /// Handles one inbound message. `path` is relative to the broker endpoint.
    pub fn handle(&self, path: &str, body: &serde_json::Value) -> Result<()> {
        let bad = |e: serde_json::Error| EngineError::malformed(format!("broker message: {e}"));
        match path.trim_end_matches('/') {
            "/results" => {
                let msg: ResultsMessage = serde_json::from_value(body.clone()).map_err(bad)?;
                let mut st = self.state.lock();
                for n in msg.notifications {
                    let d = Delivery { channel: msg.channel.clone(), execution_time: msg.execution_time.clone(), result: n.result };
                    Self::deliver(&mut st, &n.subscription_id, d);
                }
                Ok(())
            }
            "/notify" => {
                let msg: NotifyMessage = serde_json::from_value(body.clone()).map_err(bad)?;
                self.state.lock().pings.push_back(msg);
                Ok(())
            }
            other => Err(EngineError::malformed(format!("unknown broker path `{other}`"))),
        }
    }

    fn pull_with_retry(&self, source: &dyn ResultSource, ping: &NotifyMessage, id: &str) -> Result<Vec<serde_json::Value>> {
        let mut wait = self.backoff;
        let mut last = None;
        for attempt in 0..3 {
            if attempt > 0 {
                std::thread::sleep(wait);
                wait = (wait * 2).min(Duration::from_secs(1));
            }
            self.state.lock().pulls += 1;
            match source.pull(&ping.channel, &ping.execution_time, id) {
                Ok(v) => return Ok(v),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap())
    }

    /// Processes queued availability pings. A ping whose pulls keep failing
    /// is parked with the ids not yet fetched. Returns deliveries made.
    pub fn pump(&self) -> usize {
        let mut delivered = 0;
        loop {
            let Some(ping) = self.state.lock().pings.pop_front() else { break };
            let Some(source) = self.source.read().clone() else {
                self.state.lock().parked.push(ping);
                continue;
            };
            for (i, id) in ping.subscription_ids.iter().enumerate() {
                if !self.state.lock().sinks.contains_key(id) {
                    log::debug!("ping for unknown subscription {id}");
                    self.state.lock().skipped += 1;
                    continue;
                }
                match self.pull_with_retry(source.as_ref(), &ping, id) {
                    Ok(results) => {
                        let mut st = self.state.lock();
                        for result in results {
                            let d = Delivery { channel: ping.channel.clone(), execution_time: ping.execution_time.clone(), result };
                            delivered += Self::deliver(&mut st, id, d) as usize;
                        }
                    }
                    Err(e) => {
                        log::warn!("broker {}: pull failed, parking ping: {e}", self.name);
                        let rest = NotifyMessage { subscription_ids: ping.subscription_ids[i..].to_vec(), ..ping.clone() };
                        self.state.lock().parked.push(rest);
                        break;
                    }
                }
            }
        }
        delivered
    }

    /// Requeues parked pings and pumps them again.
    pub fn replay_parked(&self) -> usize {
        {
            let mut st = self.state.lock();
            let parked = std::mem::take(&mut st.parked);
            st.pings.extend(parked);
        }
        self.pump()
    }
}

/// Pulls results from an engine service over HTTP.
pub struct HttpResultSource {
    base: String,
    agent: ureq::Agent,
}

impl HttpResultSource {
    pub fn new(base: &str) -> Self {
        HttpResultSource { base: base.to_string(), agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(5)).build() }
    }
}

impl ResultSource for HttpResultSource {
    fn pull(&self, channel: &str, execution_time: &str, subscription_id: &str) -> Result<Vec<serde_json::Value>> {
        let url = join_url(&self.base, &format!("channels/{channel}/results"));
        let resp = self
            .agent
            .get(&url)
            .query("executionTime", execution_time)
            .query("subscriptionId", subscription_id)
            .call()
            .map_err(|e| EngineError::new(ErrorKind::BrokerUnreachable, format!("GET {url}: {e}")))?;
        resp.into_json().map_err(|e| EngineError::malformed(format!("pull response: {e}")))
    }
}

/// A reference broker listening on HTTP.
pub struct BrokerServer {
    pub addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
}

impl BrokerServer {
    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BrokerServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn respond(req: tiny_http::Request, code: u16, body: String) {
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
    let _ = req.respond(tiny_http::Response::from_string(body).with_status_code(code).with_header(header));
}

/// Serves `POST /results`, `POST /notify` and `GET /subscriptions/<id>/log`.
pub fn serve_broker(broker: Arc<ReferenceBroker>, addr: &str) -> Result<BrokerServer> {
    let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| EngineError::io(format!("broker listen on {addr}: {e}")))?);
    let local = server.server_addr().to_ip().ok_or_else(|| EngineError::io("broker has no IP address"))?;
    let srv = server.clone();
    let thread = std::thread::spawn(move || {
        for mut req in srv.incoming_requests() {
            let url = req.url().to_string();
            let path = url.split('?').next().unwrap_or_default().to_string();
            match (req.method(), path.as_str()) {
                (tiny_http::Method::Post, "/results" | "/notify") => {
                    let mut text = String::new();
                    let parsed = req.as_reader().read_to_string(&mut text).ok().and_then(|_| serde_json::from_str(&text).ok());
                    let outcome = match parsed {
                        Some(body) => broker.handle(&path, &body),
                        None => Err(EngineError::malformed("body is not JSON")),
                    };
                    match outcome {
                        Ok(()) => {
                            respond(req, 200, "{}".into());
                            broker.pump();
                        }
                        Err(e) => respond(req, 400, serde_json::json!({"error": e.to_string()}).to_string()),
                    }
                }
                (tiny_http::Method::Get, p) if p.starts_with("/subscriptions/") && p.ends_with("/log") => {
                    let id = &p["/subscriptions/".len()..p.len() - "/log".len()];
                    let log = broker.log(id);
                    respond(req, 200, serde_json::to_string(&log).unwrap_or_default());
                }
                _ => respond(req, 404, "{}".into()),
            }
        }
    });
    Ok(BrokerServer { addr: local, server, thread: Some(thread) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        failures: AtomicUsize,
    }

    impl ResultSource for Flaky {
        fn pull(&self, _: &str, t: &str, id: &str) -> Result<Vec<serde_json::Value>> {
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(EngineError::new(ErrorKind::BrokerUnreachable, "down"));
            }
            Ok(vec![json!({"id": id, "t": t})])
        }
    }

    fn ping(ids: &[&str]) -> serde_json::Value {
        json!({"channel": "C", "executionTime": "T1", "subscriptionIds": ids})
    }

    #[test]
    fn lazy_ping_pulls_per_subscription() {
        let b = ReferenceBroker::new("B").with_backoff(Duration::from_millis(1));
        b.set_source(Arc::new(Flaky { failures: AtomicUsize::new(0) }));
        b.register_sink("s1");
        b.register_sink("s2");
        b.handle("/notify", &ping(&["s1", "s2", "ghost"])).unwrap();
        assert_eq!(b.pump(), 2);
        assert_eq!(b.log("s1")[0].result, json!({"id": "s1", "t": "T1"}));
        assert_eq!(b.log("s2").len(), 1);
        assert_eq!(b.skipped(), 1);
    }

    #[test]
    fn failing_pulls_retry_then_park() {
        let b = ReferenceBroker::new("B").with_backoff(Duration::from_millis(1));
        let src = Arc::new(Flaky { failures: AtomicUsize::new(5) });
        b.set_source(src.clone());
        b.register_sink("s1");
        b.handle("/notify", &ping(&["s1"])).unwrap();
        assert_eq!(b.pump(), 0);
        assert_eq!(b.pulls(), 3);
        assert_eq!(b.parked().len(), 1);
        assert_eq!(b.replay_parked(), 1);
        assert!(b.parked().is_empty());
    }

    #[test]
    fn offline_sinks_catch_up_on_reconnect() {
        let b = ReferenceBroker::new("B");
        b.register_sink("s1");
        b.set_online("s1", false);
        let push = json!({"channel": "C", "executionTime": "T1", "notifications": [{"subscriptionId": "s1", "result": 7}]});
        b.handle("/results", &push).unwrap();
        assert!(b.log("s1").is_empty());
        b.set_online("s1", true);
        assert_eq!(b.log("s1").len(), 1);
    }

    #[test]
    fn http_service_round_trip() {
        let b = Arc::new(ReferenceBroker::new("B"));
        b.register_sink("s1");
        let server = serve_broker(b.clone(), "127.0.0.1:0").unwrap();
        let push = json!({"channel": "C", "executionTime": "T1", "notifications": [{"subscriptionId": "s1", "result": {"k": 1}}]});
        let t = super::super::HttpTransport::default();
        use super::super::Transport;
        t.post(&join_url(&server.endpoint(), "results"), &push).unwrap();
        let log: Vec<Delivery> = ureq::get(&format!("{}/subscriptions/s1/log", server.endpoint())).call().unwrap().into_json().unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].result, json!({"k": 1}));
    }
}
