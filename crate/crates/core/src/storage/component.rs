use crate::time::ActiveTimestamp;
use crate::value::PkKey;

use super::{ActiveRecord, ScanWindow};

/// Immutable sorted run of records with a min/max active-timestamp filter.
#[derive(Debug, Clone)]
pub struct Component {
    id: u64,
    /// Sorted by primary key, newest version first within a key.
    records: Vec<ActiveRecord>,
    filter: Option<(ActiveTimestamp, ActiveTimestamp)>,
}

impl Component {
    pub fn seal(id: u64, mut records: Vec<ActiveRecord>) -> Component {
        records.sort_by(|a, b| a.doc.pk().cmp(b.doc.pk()).then(b.version.cmp(&a.version)));
        let filter = records.iter().filter_map(|r| r.active_ts).fold(None, |acc, ts| match acc {
            None => Some((ts, ts)),
            Some((lo, hi)) => Some((lo.min(ts), hi.max(ts))),
        });
        Component { id, records, filter }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ActiveRecord] {
        &self.records
    }

    pub fn filter_min(&self) -> Option<ActiveTimestamp> {
        self.filter.map(|f| f.0)
    }

    pub fn filter_max(&self) -> Option<ActiveTimestamp> {
        self.filter.map(|f| f.1)
    }

    /// Components without a filter (plain datasets) always intersect.
    pub fn intersects(&self, window: &ScanWindow) -> bool {
        match self.filter {
            Some((lo, hi)) => window.intersects(lo, hi),
            None => true,
        }
    }

    /// Newest version stored here for `pk`.
    pub fn get(&self, pk: &PkKey) -> Option<&ActiveRecord> {
        let idx = self.records.partition_point(|r| r.doc.pk() < pk);
        self.records.get(idx).filter(|r| r.doc.pk() == pk)
    }
}
