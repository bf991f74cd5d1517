//! badlite: a desk-scale Big Active Data engine.
//!
//! Documents stream in through feeds, land in per-node partitions of active
//! datasets, and parameterized channels evaluated on a period turn them into
//! per-subscriber notifications handed to brokers.

pub mod error;
pub mod time;
pub mod value;

pub mod brokers;
pub mod channels;
pub mod cluster;
pub mod dsl;
pub mod engine;
pub mod harness;
pub mod ingestion;
pub mod planner;
pub mod service;
pub mod storage;

pub use error::{EngineError, ErrorKind, Location, Result};
pub use time::ActiveTimestamp;
pub use engine::{Engine, EngineConfig, StatementResult};
pub use value::{Document, PkKey, Point, Value};

/// Dataverse used when statements do not name one.
pub const DEFAULT_DATAVERSE: &str = "BAD";
