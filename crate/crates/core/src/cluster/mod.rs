//! In-process multi-node runtime.
//!
//! Each node owns its partitions and a skewable clock. Every write and every
//! channel-time sample on a node happens under that node's state lock and
//! draws from the same strictly monotonic clock, so no record can receive a
//! timestamp below a channel time that was already sampled.

pub mod clock;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, MutexGuard};
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, ErrorKind, Result};
use crate::storage::{DatasetDescriptor, Partition, PartitionSnapshot, StorageConfig, WriteMode};
use crate::time::{parse_datetime, ActiveTimestamp, MICROS_PER_HOUR};
use crate::value::{Document, PkKey};

pub use clock::{wall_clock_micros, ClockMode, NodeClock, TimeSource};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: u32,
    #[serde(default, rename = "clock_offset_ms")]
    pub clock_offset_ms: i64,
    #[serde(default)]
    pub clock_mode: ClockMode,
}

impl NodeConfig {
    pub fn new(id: u32, clock_offset_ms: i64) -> Self {
        NodeConfig { id, clock_offset_ms, clock_mode: ClockMode::Virtual }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub ports: Ports,
    #[serde(default = "default_seal")]
    pub seal_threshold: usize,
    /// Keep the visibility/cut log used by the correctness oracle.
    #[serde(default)]
    pub record_events: bool,
    /// Seeds subscription ids so replays are reproducible.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Ports {
    #[serde(default)]
    pub service: Option<u16>,
}

fn default_seal() -> usize {
    crate::storage::DEFAULT_SEAL_THRESHOLD
}

impl ClusterConfig {
    pub fn virtual_nodes(offsets_ms: &[i64]) -> Self {
        ClusterConfig {
            nodes: offsets_ms.iter().enumerate().map(|(i, &o)| NodeConfig::new(i as u32, o)).collect(),
            data_dir: None,
            ports: Ports::default(),
            seal_threshold: default_seal(),
            record_events: false,
            seed: 0,
        }
    }

    pub fn single() -> Self {
        Self::virtual_nodes(&[0])
    }

    pub fn mode(&self) -> ClockMode {
        if self.nodes.iter().any(|n| n.clock_mode == ClockMode::Real) {
            ClockMode::Real
        } else {
            ClockMode::Virtual
        }
    }
}

/// Virtual time zero. Scenario offsets are measured from here.
pub fn virtual_origin() -> i64 {
    parse_datetime("2024-01-01T00:00:00Z").expect("valid origin")
}

/// How a dataset is spread over nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    Hash,
    /// Copied to every node; readers use node 0's copy.
    Replicated,
}

/// Entries of the engine event log, in global position order.
#[derive(Debug, Clone)]
pub enum Event {
    Visible { pos: u64, node: usize, dataset: String, doc: Arc<Document>, active_ts: Option<ActiveTimestamp> },
    Cut { pos: u64, node: usize, channel: String, execution: u64 },
    Execution { channel: String, execution: u64, time: i64, success: bool },
}

#[derive(Debug, Default)]
pub struct NodeState {
    partitions: HashMap<String, Partition>,
    /// Previous channel execution time per channel.
    prev_times: HashMap<String, ActiveTimestamp>,
}

impl NodeState {
    pub fn partition(&self, dataset: &str) -> Option<&Partition> {
        self.partitions.get(dataset)
    }

    pub fn partition_mut(&mut self, dataset: &str) -> Option<&mut Partition> {
        self.partitions.get_mut(dataset)
    }
}

#[derive(Debug)]
pub struct Node {
    pub id: u32,
    pub index: usize,
    pub clock: NodeClock,
    state: Mutex<NodeState>,
}

impl Node {
    pub fn lock(&self) -> MutexGuard<'_, NodeState> {
        self.state.lock()
    }
}

/// A write accepted by a feed but not yet visible (visibility-lag injection).
#[derive(Debug, Clone)]
pub struct PendingWrite {
    pub due: i64,
    pub node: usize,
    pub dataset: String,
    pub doc: Document,
    pub mode: WriteMode,
}

/// What one node contributes to a channel execution.
#[derive(Debug, Clone)]
pub struct NodeInput {
    pub node: usize,
    pub prev: ActiveTimestamp,
    pub curr: ActiveTimestamp,
    pub snapshots: HashMap<String, PartitionSnapshot>,
}

#[derive(Debug)]
pub struct Cluster {
    nodes: Vec<Node>,
    coordinator: NodeClock,
    virtual_now: Option<Arc<AtomicI64>>,
    storage: StorageConfig,
    positions: AtomicU64,
    log: Option<Mutex<Vec<Event>>>,
    pending: Mutex<Vec<PendingWrite>>,
    cross_node: AtomicU64,
}

impl Cluster {
    pub fn boot(config: &ClusterConfig) -> Result<Cluster> {
        if config.nodes.is_empty() {
            return Err(EngineError::new(ErrorKind::CompileError, "a cluster needs at least one node"));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &config.nodes {
            if !seen.insert(n.id) {
                return Err(EngineError::duplicate("node", &n.id.to_string()));
            }
        }
        let (source, virtual_now, start) = match config.mode() {
            ClockMode::Real => (TimeSource::Real, None, wall_clock_micros()),
            ClockMode::Virtual => {
                let now = Arc::new(AtomicI64::new(virtual_origin()));
                (TimeSource::Virtual(now.clone()), Some(now), virtual_origin())
            }
        };
        let storage = StorageConfig {
            seal_threshold: config.seal_threshold,
            engine_epoch: start - MICROS_PER_HOUR,
            data_dir: config.data_dir.clone(),
        };
        let nodes = config
            .nodes
            .iter()
            .enumerate()
            .map(|(index, n)| Node {
                id: n.id,
                index,
                clock: NodeClock::new(source.clone(), n.clock_offset_ms * 1000),
                state: Mutex::new(NodeState::default()),
            })
            .collect();
        Ok(Cluster {
            nodes,
            coordinator: NodeClock::new(source, 0),
            virtual_now,
            storage,
            positions: AtomicU64::new(0),
            log: config.record_events.then(|| Mutex::new(Vec::new())),
            pending: Mutex::new(Vec::new()),
            cross_node: AtomicU64::new(0),
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn storage_config(&self) -> &StorageConfig {
        &self.storage
    }

    pub fn is_virtual(&self) -> bool {
        self.virtual_now.is_some()
    }

    /// Coordinator (cluster) time in epoch microseconds.
    pub fn now(&self) -> i64 {
        self.coordinator.reading()
    }

    pub fn local_now(&self, node: usize) -> ActiveTimestamp {
        self.nodes[node].clock.next()
    }

    /// Advances virtual time for every node. No-op in real mode.
    pub fn advance(&self, micros: i64) {
        if let Some(now) = &self.virtual_now {
            now.fetch_add(micros, Ordering::SeqCst);
        }
    }

    /// Sets virtual time forward to `micros` if it is ahead of now.
    pub fn advance_to(&self, micros: i64) {
        if let Some(now) = &self.virtual_now {
            now.fetch_max(micros, Ordering::SeqCst);
        }
    }

    pub fn advance_node(&self, node: usize, micros: i64) {
        self.nodes[node].clock.advance(micros);
    }

    pub fn node_for(&self, pk: &PkKey) -> usize {
        (pk.stable_hash() % self.nodes.len() as u64) as usize
    }

    pub fn node_dir(&self, node: usize) -> Option<PathBuf> {
        self.storage.data_dir.as_ref().map(|d| d.join(format!("node{}", self.nodes[node].id)))
    }

    pub fn create_partitions(&self, desc: &Arc<DatasetDescriptor>) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            let partition = Partition::new(desc.clone(), &self.storage, self.node_dir(i))?;
            node.lock().partitions.insert(desc.name.clone(), partition);
        }
        Ok(())
    }

    pub fn drop_partitions(&self, dataset: &str) {
        for (i, node) in self.nodes.iter().enumerate() {
            node.lock().partitions.remove(dataset);
            if let Some(dir) = self.node_dir(i) {
                let _ = std::fs::remove_dir_all(dir.join(dataset));
            }
        }
    }

    /// Writes on one node. The active timestamp is drawn under the node lock
    /// after the key check, which is the moment the record becomes visible.
    pub fn write_on(&self, node: usize, dataset: &str, doc: Document, mode: WriteMode, log: bool) -> Result<Option<ActiveTimestamp>> {
        let n = &self.nodes[node];
        let mut state = n.lock();
        let partition =
            state.partitions.get_mut(dataset).ok_or_else(|| EngineError::dataset_not_found(dataset))?;
        let doc = Arc::new(doc);
        let logged = (log && self.log.is_some()).then(|| doc.clone());
        let ts = partition.write((*doc).clone(), mode, || n.clock.next())?;
        if let (Some(doc), Some(events)) = (logged, &self.log) {
            let pos = self.positions.fetch_add(1, Ordering::SeqCst);
            events.lock().push(Event::Visible { pos, node, dataset: dataset.to_string(), doc, active_ts: ts });
        }
        Ok(ts)
    }

    pub fn write(&self, dataset: &str, placement: Placement, doc: Document, mode: WriteMode, log: bool) -> Result<Option<ActiveTimestamp>> {
        match placement {
            Placement::Hash => {
                let node = self.node_for(doc.pk());
                self.write_on(node, dataset, doc, mode, log)
            }
            Placement::Replicated => {
                let mut first = None;
                for i in 0..self.nodes.len() {
                    let ts = self.write_on(i, dataset, doc.clone(), mode, log && i == 0)?;
                    if i == 0 {
                        first = ts;
                    }
                }
                Ok(first)
            }
        }
    }

    pub fn flush(&self, dataset: &str) -> Result<()> {
        for node in &self.nodes {
            if let Some(p) = node.lock().partitions.get_mut(dataset) {
                p.flush()?;
            }
        }
        Ok(())
    }

    /// Snapshots of one dataset across nodes (only node 0 for replicated data).
    pub fn snapshots(&self, dataset: &str, placement: Placement) -> Result<Vec<(usize, PartitionSnapshot)>> {
        let nodes = match placement {
            Placement::Hash => self.nodes.len(),
            Placement::Replicated => 1,
        };
        (0..nodes)
            .map(|i| {
                let state = self.nodes[i].lock();
                let p = state.partitions.get(dataset).ok_or_else(|| EngineError::dataset_not_found(dataset))?;
                Ok((i, p.snapshot()))
            })
            .collect()
    }

    pub fn get(&self, dataset: &str, placement: Placement, pk: &PkKey) -> Result<Option<Arc<Document>>> {
        let node = match placement {
            Placement::Hash => self.node_for(pk),
            Placement::Replicated => 0,
        };
        let state = self.nodes[node].lock();
        let p = state.partitions.get(dataset).ok_or_else(|| EngineError::dataset_not_found(dataset))?;
        Ok(p.snapshot().get(pk).map(|r| r.doc))
    }

    /// Marks the channel start on every node under its local clock.
    pub fn init_channel(&self, channel: &str) {
        for node in &self.nodes {
            let mut state = node.lock();
            let start = node.clock.next();
            state.prev_times.insert(channel.to_string(), start);
        }
    }

    pub fn remove_channel(&self, channel: &str) {
        for node in &self.nodes {
            node.lock().prev_times.remove(channel);
        }
    }

    pub fn prev_time(&self, node: usize, channel: &str) -> Option<ActiveTimestamp> {
        self.nodes[node].lock().prev_times.get(channel).copied()
    }

    /// Samples the current channel time on one node and snapshots the given
    /// datasets in the same critical section.
    pub fn sample(&self, node: usize, channel: &str, execution: u64, datasets: &[String]) -> Result<NodeInput> {
        let n = &self.nodes[node];
        let state = n.lock();
        let prev = *state
            .prev_times
            .get(channel)
            .ok_or_else(|| EngineError::new(ErrorKind::CompileError, format!("channel `{channel}` is not initialized")))?;
        let curr = n.clock.next();
        let mut snapshots = HashMap::new();
        for d in datasets {
            if let Some(p) = state.partitions.get(d) {
                snapshots.insert(d.clone(), p.snapshot());
            }
        }
        if let Some(events) = &self.log {
            let pos = self.positions.fetch_add(1, Ordering::SeqCst);
            events.lock().push(Event::Cut { pos, node, channel: channel.to_string(), execution });
        }
        Ok(NodeInput { node, prev, curr, snapshots })
    }

    /// Advances the previous time after a successful execution.
    pub fn commit(&self, node: usize, channel: &str, curr: ActiveTimestamp) {
        self.nodes[node].lock().prev_times.insert(channel.to_string(), curr);
    }

    /// Snapshot input for ad-hoc work: no channel times involved.
    pub fn snapshot_input(&self, node: usize, datasets: &[String]) -> NodeInput {
        let state = self.nodes[node].lock();
        let mut snapshots = HashMap::new();
        for d in datasets {
            if let Some(p) = state.partitions.get(d) {
                snapshots.insert(d.clone(), p.snapshot());
            }
        }
        NodeInput { node, prev: ActiveTimestamp::new(0, 0), curr: ActiveTimestamp::new(0, 0), snapshots }
    }

    pub fn log_execution(&self, channel: &str, execution: u64, time: i64, success: bool) {
        if let Some(events) = &self.log {
            events.lock().push(Event::Execution { channel: channel.to_string(), execution, time, success });
        }
    }

    pub fn events(&self) -> Vec<Event> {
        self.log.as_ref().map(|l| l.lock().clone()).unwrap_or_default()
    }

    pub fn park(&self, write: PendingWrite) {
        self.pending.lock().push(write);
    }

    pub fn next_pending_due(&self) -> Option<i64> {
        self.pending.lock().iter().map(|p| p.due).min()
    }

    /// Applies parked writes whose due time has passed, oldest first.
    pub fn release_pending(&self, now: i64) -> Vec<Result<Option<ActiveTimestamp>>> {
        let due: Vec<PendingWrite> = {
            let mut pending = self.pending.lock();
            let (ready, waiting): (Vec<_>, Vec<_>) = pending.drain(..).partition(|p| p.due <= now);
            *pending = waiting;
            ready
        };
        let mut due = due;
        due.sort_by_key(|p| p.due);
        due.into_iter().map(|p| self.write_on(p.node, &p.dataset, p.doc, p.mode, true)).collect()
    }

    pub fn cross_node_comparisons(&self) -> &AtomicU64 {
        &self.cross_node
    }

    /// Total keys stored for a dataset across its partitions.
    pub fn record_count(&self, dataset: &str, placement: Placement) -> usize {
        let nodes = match placement {
            Placement::Hash => self.nodes.len(),
            Placement::Replicated => 1,
        };
        (0..nodes).map(|i| self.nodes[i].lock().partitions.get(dataset).map_or(0, |p| p.key_count())).sum()
    }

    pub fn opened_components(&self, dataset: &str) -> u64 {
        self.nodes.iter().map(|n| n.lock().partitions.get(dataset).map_or(0, |p| p.opened_components())).sum()
    }
}
