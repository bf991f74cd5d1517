//! On-disk component format.
//!
//! Each sealed component becomes `c<id>.data` plus `c<id>.manifest.json` in
//! the partition directory. A data record is the optional 9-byte active
//! timestamp, the document as one JSON line, then `\n`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::time::{ActiveTimestamp, ACTIVE_TIMESTAMP_BYTES};
use crate::value::{Document, Value};

use super::{ActiveRecord, Component};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: u64,
    /// Packed 8-byte timestamps; absent for plain datasets.
    pub min_ts: Option<u64>,
    pub max_ts: Option<u64>,
    pub count: usize,
    pub file: String,
}

pub fn encode_record(rec: &ActiveRecord, engine_epoch: i64) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    if let Some(ts) = rec.active_ts {
        out.extend_from_slice(&ts.encode(engine_epoch)?);
    }
    out.extend_from_slice(rec.doc.to_json_line().as_bytes());
    out.push(b'\n');
    Ok(out)
}

pub fn data_file(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("c{id}.data"))
}

pub fn manifest_file(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("c{id}.manifest.json"))
}

pub fn write_component(dir: &Path, component: &Component, active: bool, engine_epoch: i64) -> Result<Manifest> {
    let data_path = data_file(dir, component.id());
    let mut data = fs::File::create(&data_path)?;
    let mut buf = Vec::new();
    for rec in component.records() {
        if active != rec.active_ts.is_some() {
            return Err(EngineError::malformed("active timestamp presence does not match dataset kind"));
        }
        buf.extend_from_slice(&encode_record(rec, engine_epoch)?);
    }
    data.write_all(&buf)?;
    data.sync_data()?;
    let manifest = Manifest {
        id: component.id(),
        min_ts: component.filter_min().map(|t| t.packed(engine_epoch)).transpose()?,
        max_ts: component.filter_max().map(|t| t.packed(engine_epoch)).transpose()?,
        count: component.len(),
        file: data_path.file_name().expect("file name").to_string_lossy().into_owned(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| EngineError::io(e.to_string()))?;
    fs::write(manifest_file(dir, component.id()), text)?;
    Ok(manifest)
}

/// Loads a component back from its manifest. Versions are reassigned in file
/// order, which preserves the newest-first order within a key.
pub fn read_component(dir: &Path, manifest: &Manifest, pk_field: &str, engine_epoch: i64) -> Result<Component> {
    let active = manifest.min_ts.is_some();
    let mut reader = BufReader::new(fs::File::open(dir.join(&manifest.file))?);
    let mut records = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let active_ts = if active {
            let mut prefix = [0u8; ACTIVE_TIMESTAMP_BYTES];
            reader.read_exact(&mut prefix)?;
            Some(ActiveTimestamp::decode(&prefix, engine_epoch)?)
        } else {
            None
        };
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let doc = Document::from_value(Value::parse_json(line.trim_end_matches('\n'))?, pk_field)?;
        records.push(ActiveRecord { doc: Arc::new(doc), active_ts, version: (manifest.count - i) as u64 });
    }
    Ok(Component::seal(manifest.id, records))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| EngineError::io(format!("bad manifest {}: {e}", path.display())))
}

/// Total size of all component data files under a partition directory.
pub fn data_bytes(dir: &Path) -> Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.path().extension().is_some_and(|e| e == "data") {
            total += entry.metadata()?.len();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Object;

    #[test]
    fn component_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let epoch = 1_000;
        let records: Vec<ActiveRecord> = (0..5)
            .map(|i| {
                let mut o = Object::new();
                o.insert("k".into(), Value::Int(i % 3));
                o.insert("n".into(), Value::Int(i));
                ActiveRecord {
                    doc: Arc::new(Document::new(o, "k").unwrap()),
                    active_ts: Some(ActiveTimestamp::new(epoch + 10 + i, (i % 2) as u16)),
                    version: i as u64,
                }
            })
            .collect();
        let component = Component::seal(3, records);
        let manifest = write_component(dir.path(), &component, true, epoch).unwrap();
        assert_eq!(read_manifest(&manifest_file(dir.path(), 3)).unwrap(), manifest);
        let back = read_component(dir.path(), &manifest, "k", epoch).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(back.filter_min(), component.filter_min());
        assert_eq!(back.filter_max(), component.filter_max());
        for (a, b) in back.records().iter().zip(component.records()) {
            assert_eq!(a.doc, b.doc);
            assert_eq!(a.active_ts, b.active_ts);
        }
    }
}
