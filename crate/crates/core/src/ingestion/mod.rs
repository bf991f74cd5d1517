//! Feeds: JSON-lines record streams routed into dataset partitions.

use std::io::{BufRead, BufReader};
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;

use crate::dsl::{CreateFeed, OptionValue};
use crate::error::{EngineError, Result};
use crate::value::{Object, Value};

/// In-flight records buffered per feed before socket reads pause.
pub const DEFAULT_FEED_CAPACITY: usize = 10_000;

/// Name of the builtin ingest transform.
pub const ADD_INGESTION_TIME: &str = "add_ingestion_time";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedMode {
    Insert,
    Upsert,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedDef {
    pub name: String,
    pub type_name: Option<String>,
    /// `host:port` of the TCP listener, if any.
    pub socket: Option<String>,
    pub format: String,
    pub mode: FeedMode,
    pub dataset: Option<String>,
    pub transforms: Vec<String>,
    pub started: bool,
}

impl FeedDef {
    pub fn from_statement(stmt: &CreateFeed) -> Result<FeedDef> {
        let text = |key: &str| -> Result<Option<String>> {
            match stmt.option(key) {
                None => Ok(None),
                Some(OptionValue::Str(s)) => Ok(Some(s.clone())),
                Some(other) => Err(EngineError::compile(format!("feed option `{key}` must be a string, got {other:?}"))),
            }
        };
        let mode = match stmt.option("insert-feed") {
            None | Some(OptionValue::Bool(true)) => FeedMode::Insert,
            Some(OptionValue::Bool(false)) => FeedMode::Upsert,
            Some(other) => return Err(EngineError::compile(format!("feed option `insert-feed` must be a boolean, got {other:?}"))),
        };
        let format = text("format")?.unwrap_or_else(|| "JSON".into());
        if !format.eq_ignore_ascii_case("json") {
            return Err(EngineError::compile(format!("unsupported feed format `{format}`")));
        }
        Ok(FeedDef {
            name: stmt.name.clone(),
            type_name: text("type-name")?,
            socket: text("sockets")?,
            format,
            mode,
            dataset: None,
            transforms: Vec::new(),
            started: false,
        })
    }
}

#[derive(Debug, Default)]
pub struct FeedCounters {
    pub accepted: AtomicU64,
    pub rejected: AtomicU64,
    pub persisted: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CounterValues {
    pub accepted: u64,
    pub rejected: u64,
    pub persisted: u64,
}

impl FeedCounters {
    pub fn values(&self) -> CounterValues {
        CounterValues {
            accepted: self.accepted.load(Ordering::SeqCst),
            rejected: self.rejected.load(Ordering::SeqCst),
            persisted: self.persisted.load(Ordering::SeqCst),
        }
    }
}

/// Parses one JSON line into a top-level object.
pub fn parse_record(line: &str) -> Result<Object> {
    match Value::parse_json(line).map_err(|e| EngineError::malformed(e.message))? {
        Value::Object(o) => Ok(o),
        other => Err(EngineError::malformed(format!("expected a JSON object, got {}", other.type_name()))),
    }
}

/// Stamps the record with the node's current datetime. An existing
/// `ingested_timestamp` is replaced.
pub fn add_ingestion_time(mut record: Object, now: i64) -> Object {
    record.shift_remove("ingested_timestamp");
    let mut out = Object::new();
    out.insert("ingested_timestamp".into(), Value::Datetime(now));
    out.extend(record);
    out
}

/// Writes one raw line. Returns whether the record was persisted.
pub type LineSink = dyn Fn(&str) -> Result<()> + Send + Sync;

/// A running TCP feed listener. Dropping it stops accepting connections.
pub struct FeedHandle {
    pub addr: SocketAddr,
    pub counters: Arc<FeedCounters>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl FeedHandle {
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for FeedHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Listens on `addr` for newline-delimited JSON. Reader threads push lines
/// into a bounded queue drained by one writer thread; a full queue blocks
/// the readers, which in turn stops reading from their sockets.
pub fn start_socket_feed(addr: &str, capacity: usize, counters: Arc<FeedCounters>, sink: Arc<LineSink>) -> Result<FeedHandle> {
    let listener = TcpListener::bind(addr).map_err(|e| EngineError::io(format!("cannot listen on {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| EngineError::io(e.to_string()))?;
    listener.set_nonblocking(true).map_err(|e| EngineError::io(e.to_string()))?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = sync_channel::<String>(capacity.max(1));

    let writer = {
        let counters = counters.clone();
        std::thread::spawn(move || drain(rx, &counters, &*sink))
    };
    let acceptor = {
        let stop = stop.clone();
        let counters = counters.clone();
        std::thread::spawn(move || {
            let mut readers = Vec::new();
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = stream.set_nonblocking(false);
                        let _ = stream.set_read_timeout(Some(Duration::from_millis(100)));
                        let tx = tx.clone();
                        let stop = stop.clone();
                        let counters = counters.clone();
                        readers.push(std::thread::spawn(move || {
                            let mut reader = BufReader::new(stream);
                            let mut line = String::new();
                            while !stop.load(Ordering::SeqCst) {
                                match reader.read_line(&mut line) {
                                    Ok(0) => break,
                                    Ok(_) => {
                                        let text = line.trim();
                                        if !text.is_empty() {
                                            counters.accepted.fetch_add(1, Ordering::SeqCst);
                                            if tx.send(text.to_string()).is_err() {
                                                break;
                                            }
                                        }
                                        line.clear();
                                    }
                                    Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                                    Err(_) => break,
                                }
                            }
                        }));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
                    Err(e) => {
                        log::warn!("feed accept failed: {e}");
                        std::thread::sleep(Duration::from_millis(10));
                    }
                }
            }
            for r in readers {
                let _ = r.join();
            }
        })
    };
    Ok(FeedHandle { addr: local, counters, stop, threads: vec![acceptor, writer] })
}

fn drain(rx: Receiver<String>, counters: &FeedCounters, sink: &LineSink) {
    for line in rx {
        match sink(&line) {
            Ok(()) => counters.persisted.fetch_add(1, Ordering::SeqCst),
            Err(e) => {
                log::debug!("feed record rejected: {e}");
                counters.rejected.fetch_add(1, Ordering::SeqCst)
            }
        };
    }
}
