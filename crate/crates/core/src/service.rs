//! HTTP front end for a running engine.
//!
//! Routes:
//! - `POST /statements`: a statement script; returns one JSON object per statement.
//! - `POST /feeds/<name>`: JSON-lines records for a started feed.
//! - `POST /subscriptions`: `{channel, args, broker}`.
//! - `GET /channels/<name>/results?executionTime=..&subscriptionId=..`: persisted results.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Deserialize;
use serde_json::json;

use crate::engine::Engine;
use crate::error::{EngineError, ErrorKind, Result};
use crate::value::Value;

pub struct EngineServer {
    pub addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
}

impl EngineServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server thread exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for EngineServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn error_json(e: &EngineError) -> serde_json::Value {
    let mut v = json!({"error": e.kind.as_str(), "message": e.message});
    if let Some(loc) = e.location {
        v["line"] = json!(loc.line);
        v["column"] = json!(loc.column);
    }
    v
}

fn status(kind: ErrorKind) -> u16 {
    match kind {
        ErrorKind::DatasetNotFound | ErrorKind::BrokerNotFound => 404,
        ErrorKind::Io | ErrorKind::BrokerUnreachable => 500,
        _ => 400,
    }
}

#[derive(Deserialize)]
struct SubscribeBody {
    channel: String,
    #[serde(default)]
    args: Vec<serde_json::Value>,
    broker: String,
}

type Reply = (u16, serde_json::Value);

fn reply(r: Result<serde_json::Value>) -> Reply {
    match r {
        Ok(v) => (200, v),
        Err(e) => (status(e.kind), error_json(&e)),
    }
}

fn query_param(url: &str, name: &str) -> Option<String> {
    let query = url.split_once('?')?.1;
    url::form_urlencoded::parse(query.as_bytes()).find(|(k, _)| k == name).map(|(_, v)| v.into_owned())
}

fn route(engine: &Engine, method: &tiny_http::Method, url: &str, body: &str) -> Reply {
    use tiny_http::Method::{Get, Post};
    let path = url.split('?').next().unwrap_or_default();
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    match (method, segments.as_slice()) {
        (Post, ["statements"]) => reply(
            engine.run_script(body).map(|results| serde_json::Value::Array(results.iter().map(|r| r.to_json()).collect())),
        ),
        (Post, ["feeds", feed]) => {
            let mut accepted = 0u64;
            let mut errors = Vec::new();
            for line in body.lines().filter(|l| !l.trim().is_empty()) {
                match engine.ingest(feed, line) {
                    Ok(()) => accepted += 1,
                    Err(e) if matches!(e.kind, ErrorKind::MalformedRecord | ErrorKind::PrimaryKeyViolation) => errors.push(error_json(&e)),
                    Err(e) => return reply(Err(e)),
                }
            }
            (200, json!({"accepted": accepted, "rejected": errors.len(), "errors": errors}))
        }
        (Post, ["subscriptions"]) => reply((|| {
            let b: SubscribeBody = serde_json::from_str(body).map_err(|e| EngineError::malformed(format!("subscription body: {e}")))?;
            let args = b.args.iter().map(Value::from_json).collect::<Result<Vec<_>>>()?;
            Ok(json!({"subscriptionId": engine.subscribe(&b.channel, args, &b.broker)?}))
        })()),
        (Get, ["channels", channel, "results"]) => {
            let (Some(t), Some(id)) = (query_param(url, "executionTime"), query_param(url, "subscriptionId")) else {
                return (400, json!({"error": "MalformedRecord", "message": "executionTime and subscriptionId are required"}));
            };
            reply(engine.pull(channel, &t, &id).map(|rows| serde_json::Value::Array(rows.iter().map(Value::to_json).collect())))
        }
        _ => (404, json!({"error": "NotFound", "message": format!("no route for {method} {path}")})),
    }
}

/// Starts serving on `addr` (e.g. "127.0.0.1:0").
pub fn serve_engine(engine: Arc<Engine>, addr: &str) -> Result<EngineServer> {
    let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| EngineError::io(format!("listen on {addr}: {e}")))?);
    let local = server.server_addr().to_ip().ok_or_else(|| EngineError::io("service has no IP address"))?;
    let srv = server.clone();
    let thread = std::thread::spawn(move || {
        for mut req in srv.incoming_requests() {
            let mut body = String::new();
            let (code, value) = match req.as_reader().read_to_string(&mut body) {
                Ok(_) => route(&engine, req.method(), req.url(), &body),
                Err(e) => (400, json!({"error": "MalformedRecord", "message": e.to_string()})),
            };
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
            let _ = req.respond(tiny_http::Response::from_string(value.to_string()).with_status_code(code).with_header(header));
        }
    });
    Ok(EngineServer { addr: local, server, thread: Some(thread) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brokers::{serve_broker, HttpResultSource, HttpTransport, ReferenceBroker};
    use crate::cluster::ClusterConfig;
    use crate::engine::EngineConfig;

    fn post(url: &str, body: &str) -> (u16, serde_json::Value) {
        match ureq::post(url).send_string(body) {
            Ok(r) => (r.status(), r.into_json().unwrap()),
            Err(ureq::Error::Status(code, r)) => (code, r.into_json().unwrap()),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn statements_feeds_and_lazy_pull_over_http() {
        let engine = Engine::new(EngineConfig::new(ClusterConfig::virtual_nodes(&[0, 0]))).unwrap();
        engine.set_transport(Arc::new(HttpTransport::default()));
        let server = serve_engine(engine.clone(), "127.0.0.1:0").unwrap();
        let base = server.base_url();

        let broker = Arc::new(ReferenceBroker::new("B"));
        broker.set_source(Arc::new(HttpResultSource::new(&base)));
        let bsrv = serve_broker(broker.clone(), "127.0.0.1:0").unwrap();

        let script = format!(
            r#"CREATE TYPE T AS OPEN {{ id: int, area: string }};
CREATE ACTIVE DATASET Ts(T) PRIMARY KEY id;
CREATE FEED F WITH {{ "type-name": "T", "format": "JSON", "insert-feed": true }};
CONNECT FEED F TO DATASET Ts;
START FEED F;
CREATE BROKER B AT "{}";
CREATE CONTINUOUS CHANNEL Local(area) PERIOD duration("PT10S") {{
  SELECT VALUE t.id FROM Ts t WHERE t.area = area AND is_new(t)
}};"#,
            bsrv.endpoint()
        );
        let (code, out) = post(&format!("{base}/statements"), &script);
        assert_eq!(code, 200, "{out}");
        assert_eq!(out.as_array().unwrap().len(), 7);

        let (code, out) = post(&format!("{base}/subscriptions"), r#"{"channel":"Local","args":["a"],"broker":"B"}"#);
        assert_eq!(code, 200, "{out}");
        let sub = out["subscriptionId"].as_str().unwrap().to_string();
        broker.register_sink(&sub);

        let (code, out) = post(&format!("{base}/feeds/F"), "{\"id\":1,\"area\":\"a\"}\n{\"id\":2,\"area\":\"b\"}\n{bad\n");
        assert_eq!(code, 200);
        assert_eq!((out["accepted"].as_u64(), out["rejected"].as_u64()), (Some(2), Some(1)));

        engine.advance(10_000_000);
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(5);
        while broker.log(&sub).is_empty() && std::time::Instant::now() < deadline {
            std::thread::sleep(std::time::Duration::from_millis(10));
        }
        let log = broker.log(&sub);
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].result, json!(1));

        let (code, out) = post(&format!("{base}/statements"), "SELECT VALUE x FROM Nope x;");
        assert_eq!(code, 404);
        assert_eq!(out["error"], "DatasetNotFound");
        let (code, out) = post(&format!("{base}/statements"), "CREATE TYPE;");
        assert_eq!(code, 400);
        assert!(out["line"].is_number());
        let missing = ureq::get(&format!("{base}/channels/Local/results")).call();
        assert!(matches!(missing, Err(ureq::Error::Status(400, _))));
    }
}
