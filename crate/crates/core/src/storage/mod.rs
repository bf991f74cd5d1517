//! Component-based per-node storage for plain and active datasets.

mod component;
mod partition;
pub mod persist;

use serde::{Deserialize, Serialize};

pub use component::Component;
pub use partition::{Partition, PartitionSnapshot};

use crate::time::ActiveTimestamp;
use crate::value::Document;
use std::sync::Arc;

/// Records per in-memory buffer before it is sealed into a component.
pub const DEFAULT_SEAL_THRESHOLD: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub primary_key_field: String,
    pub is_active: bool,
    pub dataverse: String,
    #[serde(default)]
    pub type_name: Option<String>,
}

impl DatasetDescriptor {
    pub fn new(name: &str, primary_key_field: &str, is_active: bool) -> Self {
        DatasetDescriptor {
            name: name.to_string(),
            primary_key_field: primary_key_field.to_string(),
            is_active,
            dataverse: crate::DEFAULT_DATAVERSE.to_string(),
            type_name: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WriteMode {
    Insert,
    Upsert,
}

/// Exclusive timestamp bounds for a scan; `None` means unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanWindow {
    pub lower: Option<ActiveTimestamp>,
    pub upper: Option<ActiveTimestamp>,
}

impl ScanWindow {
    pub const FULL: ScanWindow = ScanWindow { lower: None, upper: None };

    pub fn between(lower: ActiveTimestamp, upper: ActiveTimestamp) -> Self {
        ScanWindow { lower: Some(lower), upper: Some(upper) }
    }

    pub fn below(upper: ActiveTimestamp) -> Self {
        ScanWindow { lower: None, upper: Some(upper) }
    }

    pub fn is_full(&self) -> bool {
        self.lower.is_none() && self.upper.is_none()
    }

    pub fn below_upper(&self, ts: ActiveTimestamp) -> bool {
        self.upper.is_none_or(|u| ts < u)
    }

    pub fn above_lower(&self, ts: ActiveTimestamp) -> bool {
        self.lower.is_none_or(|l| ts > l)
    }

    pub fn admits(&self, ts: ActiveTimestamp) -> bool {
        self.below_upper(ts) && self.above_lower(ts)
    }

    /// Whether any timestamp in `[min, max]` can satisfy the window.
    pub fn intersects(&self, min: ActiveTimestamp, max: ActiveTimestamp) -> bool {
        self.above_lower(max) && self.below_upper(min)
    }
}

/// A stored document plus its hidden active timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveRecord {
    pub doc: Arc<Document>,
    pub active_ts: Option<ActiveTimestamp>,
    /// Per-partition write sequence, used to order versions of one key.
    pub version: u64,
}

#[derive(Debug, Clone)]
pub struct StorageConfig {
    pub seal_threshold: usize,
    /// Origin of the 48-bit relative timestamp encoding.
    pub engine_epoch: i64,
    pub data_dir: Option<std::path::PathBuf>,
}

impl Default for StorageConfig {
    fn default() -> Self {
        StorageConfig { seal_threshold: DEFAULT_SEAL_THRESHOLD, engine_epoch: 0, data_dir: None }
    }
}
