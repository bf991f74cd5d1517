use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{EngineError, ErrorKind, Result};
use crate::time::ActiveTimestamp;
use crate::value::{Document, PkKey};

use super::persist;
use super::{ActiveRecord, Component, DatasetDescriptor, ScanWindow, StorageConfig, WriteMode};

/// One node's share of a dataset: a mutable buffer plus sealed components.
///
/// The owning node serializes writers; readers take a [`PartitionSnapshot`].
#[derive(Debug)]
pub struct Partition {
    desc: Arc<DatasetDescriptor>,
    buffer: Arc<Vec<ActiveRecord>>,
    sealed: Vec<Arc<Component>>,
    live: HashSet<PkKey>,
    next_version: u64,
    next_component_id: u64,
    seal_threshold: usize,
    engine_epoch: i64,
    dir: Option<PathBuf>,
    opened: Arc<AtomicU64>,
}

impl Partition {
    pub fn new(desc: Arc<DatasetDescriptor>, config: &StorageConfig, node_dir: Option<PathBuf>) -> Result<Self> {
        let dir = match node_dir {
            Some(base) => {
                let dir = base.join(&desc.name);
                std::fs::create_dir_all(&dir)?;
                Some(dir)
            }
            None => None,
        };
        Ok(Partition {
            desc,
            buffer: Arc::new(Vec::new()),
            sealed: Vec::new(),
            live: HashSet::new(),
            next_version: 0,
            next_component_id: 0,
            seal_threshold: config.seal_threshold.max(1),
            engine_epoch: config.engine_epoch,
            dir,
            opened: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn descriptor(&self) -> &Arc<DatasetDescriptor> {
        &self.desc
    }

    pub fn contains(&self, pk: &PkKey) -> bool {
        self.live.contains(pk)
    }

    /// Number of distinct keys currently stored.
    pub fn key_count(&self) -> usize {
        self.live.len()
    }

    pub fn sealed_components(&self) -> &[Arc<Component>] {
        &self.sealed
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Sealed components opened by scans since creation.
    pub fn opened_components(&self) -> u64 {
        self.opened.load(Ordering::Relaxed)
    }

    /// Writes one document. `assign_ts` runs only after the key check passes,
    /// so a rejected write never consumes a timestamp. The record is visible
    /// to snapshots taken after this call returns.
    pub fn write(
        &mut self,
        doc: Document,
        mode: WriteMode,
        assign_ts: impl FnOnce() -> ActiveTimestamp,
    ) -> Result<Option<ActiveTimestamp>> {
        if mode == WriteMode::Insert && self.live.contains(doc.pk()) {
            return Err(EngineError::new(
                ErrorKind::PrimaryKeyViolation,
                format!("duplicate primary key {} in dataset `{}`", doc.pk(), self.desc.name),
            ));
        }
        let active_ts = self.desc.is_active.then(assign_ts);
        self.live.insert(doc.pk().clone());
        let version = self.next_version;
        self.next_version += 1;
        Arc::make_mut(&mut self.buffer).push(ActiveRecord { doc: Arc::new(doc), active_ts, version });
        if self.buffer.len() >= self.seal_threshold {
            self.flush()?;
        }
        Ok(active_ts)
    }

    /// Seals the buffer into a component. Empty buffers are a no-op.
    pub fn flush(&mut self) -> Result<Option<Arc<Component>>> {
        if self.buffer.is_empty() {
            return Ok(None);
        }
        let records = std::mem::take(Arc::make_mut(&mut self.buffer));
        let component = Arc::new(Component::seal(self.next_component_id, records));
        self.next_component_id += 1;
        if let Some(dir) = &self.dir {
            persist::write_component(dir, &component, self.desc.is_active, self.engine_epoch)?;
        }
        self.sealed.push(component.clone());
        Ok(Some(component))
    }

    pub fn snapshot(&self) -> PartitionSnapshot {
        PartitionSnapshot {
            buffer: self.buffer.clone(),
            sealed: self.sealed.clone(),
            opened: self.opened.clone(),
            active: self.desc.is_active,
        }
    }
}

/// Frozen view of a partition: sealed components plus the buffer as of
/// snapshot time.
#[derive(Debug, Clone)]
pub struct PartitionSnapshot {
    buffer: Arc<Vec<ActiveRecord>>,
    sealed: Vec<Arc<Component>>,
    opened: Arc<AtomicU64>,
    active: bool,
}

impl PartitionSnapshot {
    /// Latest version per key among records below the upper bound, kept when
    /// above the lower bound. Sealed components disjoint from the window are
    /// skipped without being opened. Output is ordered by primary key.
    pub fn scan(&self, window: &ScanWindow) -> Vec<ActiveRecord> {
        let window = if self.active { *window } else { ScanWindow::FULL };
        fn visit<'a>(rec: &'a ActiveRecord, window: &ScanWindow, out: &mut Vec<ActiveRecord>, seen: &mut HashSet<&'a PkKey>) {
            if rec.active_ts.is_some_and(|ts| !window.below_upper(ts)) {
                return;
            }
            if !seen.insert(rec.doc.pk()) {
                return;
            }
            if rec.active_ts.is_none_or(|ts| window.above_lower(ts)) {
                out.push(rec.clone());
            }
        }
        let mut seen: HashSet<&PkKey> = HashSet::new();
        let mut out = Vec::new();
        for rec in self.buffer.iter().rev() {
            visit(rec, &window, &mut out, &mut seen);
        }
        for component in self.sealed.iter().rev() {
            if !component.intersects(&window) {
                continue;
            }
            self.opened.fetch_add(1, Ordering::Relaxed);
            for rec in component.records() {
                visit(rec, &window, &mut out, &mut seen);
            }
        }
        drop(seen);
        out.sort_by(|a, b| a.doc.pk().cmp(b.doc.pk()));
        out
    }

    /// Newest version of one key, ignoring timestamps.
    pub fn get(&self, pk: &PkKey) -> Option<ActiveRecord> {
        if let Some(rec) = self.buffer.iter().rev().find(|r| r.doc.pk() == pk) {
            return Some(rec.clone());
        }
        self.sealed.iter().rev().find_map(|c| c.get(pk).cloned())
    }

    /// Upper estimate of records a windowed scan would touch.
    pub fn estimate(&self, window: &ScanWindow) -> usize {
        let window = if self.active { *window } else { ScanWindow::FULL };
        let buffered = self.buffer.iter().filter(|r| r.active_ts.is_none_or(|ts| window.admits(ts))).count();
        buffered + self.sealed.iter().filter(|c| c.intersects(&window)).map(|c| c.len()).sum::<usize>()
    }

    pub fn sealed(&self) -> &[Arc<Component>] {
        &self.sealed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{Object, Value};

    fn doc(pk: i64, v: i64) -> Document {
        let mut o = Object::new();
        o.insert("id".into(), Value::Int(pk));
        o.insert("v".into(), Value::Int(v));
        Document::new(o, "id").unwrap()
    }

    fn active(threshold: usize) -> Partition {
        let config = StorageConfig { seal_threshold: threshold, ..StorageConfig::default() };
        Partition::new(Arc::new(DatasetDescriptor::new("T", "id", true)), &config, None).unwrap()
    }

    fn ts(m: i64) -> ActiveTimestamp {
        ActiveTimestamp::new(m, 0)
    }

    #[test]
    fn flush_filter_is_min_max() {
        let mut p = active(100);
        for (i, m) in [5, 9, 7].into_iter().enumerate() {
            p.write(doc(i as i64, 0), WriteMode::Insert, || ts(m)).unwrap();
        }
        let c = p.flush().unwrap().unwrap();
        assert_eq!(c.filter_min(), Some(ts(5)));
        assert_eq!(c.filter_max(), Some(ts(9)));
        assert!(p.flush().unwrap().is_none());
    }

    #[test]
    fn insert_rejects_duplicate_key_without_consuming_ts() {
        let mut p = active(100);
        p.write(doc(1, 0), WriteMode::Insert, || ts(1)).unwrap();
        let err = p.write(doc(1, 1), WriteMode::Insert, || panic!("ts must not be drawn")).unwrap_err();
        assert_eq!(err.kind, ErrorKind::PrimaryKeyViolation);
    }

    #[test]
    fn windows_skip_components() {
        let mut p = active(10);
        for m in 0..30 {
            p.write(doc(m, 0), WriteMode::Insert, || ts(m)).unwrap();
        }
        assert_eq!(p.sealed_components().len(), 3);
        let snap = p.snapshot();
        let before = p.opened_components();
        let got = snap.scan(&ScanWindow::between(ts(15), ts(25)));
        assert_eq!(p.opened_components() - before, 2);
        let keys: Vec<i64> = got.iter().map(|r| r.doc.get("id").cloned().unwrap()).map(|v| match v {
            Value::Int(i) => i,
            _ => unreachable!(),
        }).collect();
        assert_eq!(keys, (16..25).collect::<Vec<_>>());
    }

    #[test]
    fn upsert_shadows_as_of_upper_bound() {
        let mut p = active(2);
        p.write(doc(1, 10), WriteMode::Upsert, || ts(1)).unwrap();
        p.write(doc(2, 0), WriteMode::Upsert, || ts(2)).unwrap();
        p.write(doc(1, 7), WriteMode::Upsert, || ts(3)).unwrap();
        let snap = p.snapshot();
        let all = snap.scan(&ScanWindow::FULL);
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].doc.get("v"), Some(&Value::Int(7)));
        let old = snap.scan(&ScanWindow::below(ts(3)));
        assert_eq!(old[0].doc.get("v"), Some(&Value::Int(10)));
        // the old version is not new in a window that starts after it
        let fresh = snap.scan(&ScanWindow::between(ts(2), ts(4)));
        assert_eq!(fresh.len(), 1);
        assert_eq!(fresh[0].doc.get("v"), Some(&Value::Int(7)));
    }

    #[test]
    fn snapshots_are_frozen() {
        let mut p = active(100);
        p.write(doc(1, 0), WriteMode::Insert, || ts(1)).unwrap();
        let snap = p.snapshot();
        p.write(doc(2, 0), WriteMode::Insert, || ts(2)).unwrap();
        assert_eq!(snap.scan(&ScanWindow::FULL).len(), 1);
        assert_eq!(p.snapshot().scan(&ScanWindow::FULL).len(), 2);
    }
}
