use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::time::ActiveTimestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Real,
    #[default]
    Virtual,
}

/// Where clock readings come from: the wall clock or a harness-driven counter.
#[derive(Debug, Clone)]
pub enum TimeSource {
    Real,
    Virtual(Arc<AtomicI64>),
}

impl TimeSource {
    pub fn now(&self) -> i64 {
        match self {
            TimeSource::Real => wall_clock_micros(),
            TimeSource::Virtual(t) => t.load(Ordering::SeqCst),
        }
    }
}

pub fn wall_clock_micros() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros() as i64).unwrap_or(0)
}

/// A node-local clock: shared source plus a fixed offset and a node-only drift.
///
/// `next` is strictly monotonic. Equal microsecond readings are split with the
/// sequence counter; the counter never reaches `u16::MAX`, so
/// `ActiveTimestamp::ceiling(m)` is above every timestamp issued at `m`.
#[derive(Debug)]
pub struct NodeClock {
    source: TimeSource,
    offset: i64,
    drift: AtomicI64,
    last: Mutex<ActiveTimestamp>,
}

impl NodeClock {
    pub fn new(source: TimeSource, offset_micros: i64) -> Self {
        NodeClock { source, offset: offset_micros, drift: AtomicI64::new(0), last: Mutex::new(ActiveTimestamp::new(i64::MIN, 0)) }
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    /// Current reading in epoch microseconds, without issuing a timestamp.
    pub fn reading(&self) -> i64 {
        self.source.now() + self.offset + self.drift.load(Ordering::SeqCst)
    }

    pub fn next(&self) -> ActiveTimestamp {
        let reading = self.reading();
        let mut last = self.last.lock();
        let ts = if reading > last.micros {
            ActiveTimestamp::new(reading, 0)
        } else if last.seq < u16::MAX - 1 {
            ActiveTimestamp::new(last.micros, last.seq + 1)
        } else {
            ActiveTimestamp::new(last.micros + 1, 0)
        };
        *last = ts;
        ts
    }

    /// Moves only this clock forward (virtual mode skew injection).
    pub fn advance(&self, micros: i64) {
        self.drift.fetch_add(micros, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consecutive_readings_increase() {
        let source = TimeSource::Virtual(Arc::new(AtomicI64::new(1_000)));
        let clock = NodeClock::new(source, 0);
        let a = clock.next();
        let b = clock.next();
        assert!(b > a);
        assert_eq!((a.micros, b.micros), (1_000, 1_000));
        assert!(b < ActiveTimestamp::ceiling(1_000));
    }

    #[test]
    fn virtual_advance_and_offset() {
        let now = Arc::new(AtomicI64::new(0));
        let clock = NodeClock::new(TimeSource::Virtual(now.clone()), -200_000);
        now.fetch_add(10_000_000, Ordering::SeqCst);
        assert_eq!(clock.next().micros, 10_000_000 - 200_000);
        clock.advance(5);
        assert_eq!(clock.reading(), 10_000_000 - 200_000 + 5);
    }

    #[test]
    fn sequence_rolls_into_next_micro() {
        let clock = NodeClock::new(TimeSource::Virtual(Arc::new(AtomicI64::new(7))), 0);
        let mut prev = clock.next();
        for _ in 0..70_000 {
            let ts = clock.next();
            assert!(ts > prev);
            assert!(ts.seq < u16::MAX);
            prev = ts;
        }
        assert_eq!(prev.micros, 8);
    }
}
