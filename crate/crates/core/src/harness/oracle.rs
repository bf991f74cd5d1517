//! Offline recomputation of the nearby-hateful-tweets workload from the
//! engine's visibility/cut log.
//!
//! A record is due in the first successful execution whose cut on the
//! record's node comes after the record became visible. It is matched
//! against the officer location that was visible at that execution's cut on
//! the officer's node. Matching is brute force over the log.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cluster::Event;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub channel: String,
    #[serde(default = "tweets")]
    pub tweets: String,
    #[serde(default = "officers")]
    pub officers: String,
    #[serde(default = "five")]
    pub max_distance: f64,
}

fn tweets() -> String {
    "Tweets".into()
}
fn officers() -> String {
    "OfficerLocations".into()
}
fn five() -> f64 {
    5.0
}

/// A subscription as the harness created it.
#[derive(Debug, Clone)]
pub struct OracleSubscription {
    pub id: String,
    pub label: String,
    pub oid: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Pair {
    pub subscription: String,
    pub key: serde_json::Value,
}

impl Ord for Pair {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.subscription, self.key.to_string()).cmp(&(&other.subscription, other.key.to_string()))
    }
}

impl PartialOrd for Pair {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OracleReport {
    pub missed: Vec<Pair>,
    pub duplicated: Vec<Pair>,
    /// Delivered pairs the oracle never expected.
    pub spurious: Vec<Pair>,
    pub matched: u64,
}

impl OracleReport {
    pub fn is_exact(&self) -> bool {
        self.missed.is_empty() && self.duplicated.is_empty() && self.spurious.is_empty()
    }
}

fn point(v: Option<&Value>) -> Option<(f64, f64)> {
    match v? {
        Value::Point(p) => Some((p.x(), p.y())),
        _ => None,
    }
}

/// `delivered` holds (subscription id, tweet id as JSON) for every
/// notification of every successful execution.
pub fn check(spec: &OracleSpec, events: &[Event], subs: &[OracleSubscription], delivered: &[(String, serde_json::Value)]) -> OracleReport {
    // (execution, node) -> cut position; successful executions in order.
    let mut cuts: HashMap<(u64, usize), u64> = HashMap::new();
    let mut succeeded: Vec<u64> = Vec::new();
    for e in events {
        match e {
            Event::Cut { pos, node, channel, execution } if *channel == spec.channel => {
                cuts.insert((*execution, *node), *pos);
            }
            Event::Execution { channel, execution, success: true, .. } if *channel == spec.channel => succeeded.push(*execution),
            _ => {}
        }
    }
    succeeded.sort_unstable();

    // Officer versions per oid: (pos, node, location).
    let mut versions: HashMap<String, Vec<(u64, usize, Option<(f64, f64)>)>> = HashMap::new();
    for e in events {
        if let Event::Visible { pos, node, dataset, doc, .. } = e {
            if *dataset == spec.officers {
                if let Some(oid) = doc.get("oid") {
                    versions.entry(oid.to_json_string()).or_default().push((*pos, *node, point(doc.get("location"))));
                }
            }
        }
    }

    let mut expected: BTreeMap<Pair, u64> = BTreeMap::new();
    for e in events {
        let Event::Visible { pos, node, dataset, doc, .. } = e else { continue };
        if *dataset != spec.tweets || doc.get("hateful_flag") != Some(&Value::Bool(true)) {
            continue;
        }
        let Some(exec) = succeeded.iter().copied().find(|k| cuts.get(&(*k, *node)).is_some_and(|c| c > pos)) else { continue };
        let Some((tx, ty)) = point(doc.get("location")) else { continue };
        let key = doc.get("tid").map(|v| v.to_json()).unwrap_or(serde_json::Value::Null);
        for s in subs {
            let oid = Value::from_json(&s.oid).map(|v| v.to_json_string()).unwrap_or_default();
            let latest = versions.get(&oid).and_then(|vs| {
                vs.iter().filter(|(p, n, _)| cuts.get(&(exec, *n)).is_some_and(|c| p < c)).max_by_key(|(p, _, _)| *p)
            });
            if let Some((_, _, Some((ox, oy)))) = latest {
                if ((tx - ox).powi(2) + (ty - oy).powi(2)).sqrt() < spec.max_distance {
                    *expected.entry(Pair { subscription: s.label.clone(), key: key.clone() }).or_default() += 1;
                }
            }
        }
    }

    let label: HashMap<&str, &str> = subs.iter().map(|s| (s.id.as_str(), s.label.as_str())).collect();
    let mut actual: BTreeMap<Pair, u64> = BTreeMap::new();
    for (id, key) in delivered {
        let subscription = label.get(id.as_str()).map_or_else(|| id.clone(), |l| l.to_string());
        *actual.entry(Pair { subscription, key: key.clone() }).or_default() += 1;
    }

    let mut report = OracleReport::default();
    for (pair, &want) in &expected {
        let got = actual.get(pair).copied().unwrap_or(0);
        report.matched += got.min(want);
        if got < want {
            report.missed.push(pair.clone());
        } else if got > want {
            report.duplicated.push(pair.clone());
        }
    }
    for (pair, &got) in &actual {
        if !expected.contains_key(pair) {
            report.spurious.push(pair.clone());
            if got > 1 {
                report.duplicated.push(pair.clone());
            }
        }
    }
    report
}
