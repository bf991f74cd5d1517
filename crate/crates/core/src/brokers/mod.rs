//! Broker registry records, the broker wire protocol, transports and a
//! reference broker with subscriber sinks.

mod reference;
mod transport;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, ErrorKind, Result};

pub use reference::{serve_broker, BrokerServer, Delivery, HttpResultSource, ReferenceBroker, ResultSource};
pub use transport::{HttpTransport, MemoryTransport, Transport};

/// Row of the replicated `Brokers` dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerRecord {
    pub dataverse_name: String,
    pub broker_name: String,
    pub broker_end_point: String,
}

/// Eager delivery: `POST <endpoint>/results`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultsMessage {
    pub channel: String,
    pub execution_time: String,
    pub notifications: Vec<PushedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PushedResult {
    pub subscription_id: String,
    pub result: serde_json::Value,
}

/// Lazy delivery: `POST <endpoint>/notify`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NotifyMessage {
    pub channel: String,
    pub execution_time: String,
    pub subscription_ids: Vec<String>,
}

/// Accepts absolute http(s) URLs with a host.
pub fn validate_endpoint(endpoint: &str) -> Result<()> {
    let bad = |why: &str| EngineError::new(ErrorKind::ParseError, format!("invalid broker endpoint `{endpoint}`: {why}"));
    let url = url::Url::parse(endpoint).map_err(|e| bad(&e.to_string()))?;
    if url.scheme() != "http" && url.scheme() != "https" {
        return Err(bad("scheme must be http or https"));
    }
    if url.host_str().is_none_or(|h| h.is_empty()) {
        return Err(bad("missing host"));
    }
    Ok(())
}

/// Joins an endpoint and a path without doubling slashes.
pub fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_validation() {
        assert!(validate_endpoint("http://BROKER_A_HOST:8080/API").is_ok());
        assert!(validate_endpoint("https://b.example/x").is_ok());
        for bad in ["BROKER_A", "ftp://x/y", "http://", "http//x"] {
            assert_eq!(validate_endpoint(bad).unwrap_err().kind, ErrorKind::ParseError, "{bad}");
        }
    }

    #[test]
    fn message_field_names() {
        let m = NotifyMessage { channel: "C".into(), execution_time: "t".into(), subscription_ids: vec!["a".into()] };
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, r#"{"channel":"C","executionTime":"t","subscriptionIds":["a"]}"#);
        assert_eq!(join_url("http://h/api/", "/notify"), "http://h/api/notify");
    }
}
