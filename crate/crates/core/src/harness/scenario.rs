//! Deterministic timeline replay under virtual clocks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::oracle::{self, OracleReport, OracleSpec, OracleSubscription};
use crate::cluster::{virtual_origin, ClusterConfig};
use crate::engine::{Engine, EngineConfig};
use crate::error::{EngineError, ErrorKind, Result};
use crate::value::Value;

const MICROS: f64 = 1_000_000.0;

fn single() -> ClusterConfig {
    ClusterConfig::single()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "single")]
    pub cluster: ClusterConfig,
    /// Statements run before the timeline starts.
    pub setup: String,
    /// Dotted path of the result field compared by expectations.
    pub result_key: String,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    pub timeline: Vec<TimedEvent>,
    /// Seconds after the origin at which the run stops.
    pub until: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TimedEvent {
    /// Seconds after the virtual origin.
    #[serde(default)]
    pub at: f64,
    #[serde(flatten)]
    pub event: ScenarioEvent,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioEvent {
    Statement { dsl: String },
    Subscribe { channel: String, args: Vec<serde_json::Value>, broker: String, label: String },
    Ingest { feed: String, doc: serde_json::Value },
    /// Skews one node's clock, or every node's when `node` is absent.
    AdvanceClock { node: Option<usize>, by: f64 },
    DelayNextExecution { channel: String, by: f64 },
    StallNextExecution { channel: String, by: f64 },
    InjectVisibilityLag { dataset: String, by: f64 },
    /// Checked after the run: (subscription label, result key) pairs.
    Expect { channel: String, execution: u64, notifications: Vec<(String, serde_json::Value)> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionCheck {
    pub channel: String,
    pub index: u64,
    pub expected: Vec<(String, serde_json::Value)>,
    pub actual: Vec<(String, serde_json::Value)>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub executions: Vec<ExecutionCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleReport>,
    pub pass: bool,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable diff of failed expectations.
    pub fn failures(&self) -> String {
        let mut out = String::new();
        for e in self.executions.iter().filter(|e| !e.pass) {
            out.push_str(&format!(
                "{} execution {}: expected {} got {}\n",
                e.channel,
                e.index,
                serde_json::to_string(&e.expected).unwrap(),
                serde_json::to_string(&e.actual).unwrap()
            ));
        }
        out
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| {
            EngineError::new(ErrorKind::ParseError, format!("scenario: {e}"))
                .at(crate::Location { line: e.line() as u32, column: e.column() as u32 })
        })?;
        let mut last = f64::NEG_INFINITY;
        for ev in &s.timeline {
            if matches!(ev.event, ScenarioEvent::Expect { .. }) {
                continue;
            }
            if ev.at < last {
                return Err(EngineError::new(ErrorKind::ParseError, format!("timeline goes back in time at {}s", ev.at)));
            }
            last = ev.at;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Scenario::parse(&std::fs::read_to_string(path)?)
    }
}

fn micros(seconds: f64) -> i64 {
    (seconds * MICROS).round() as i64
}

fn key_of(result: &Value, path: &str) -> serde_json::Value {
    let parts: Vec<&str> = path.split('.').collect();
    result.get_path(&parts).map(Value::to_json).unwrap_or(serde_json::Value::Null)
}

pub struct ScenarioRun {
    pub engine: std::sync::Arc<Engine>,
    pub report: ScenarioReport,
}

/// Replays a scenario; `Err` only for setup or event failures.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioRun> {
    let mut cfg = s.cluster.clone();
    cfg.record_events = true;
    for n in &mut cfg.nodes {
        n.clock_mode = crate::cluster::ClockMode::Virtual;
    }
    let engine = Engine::new(EngineConfig::new(cfg))?;
    // Replays never reach real brokers.
    engine.set_transport(std::sync::Arc::new(super::Discard));
    engine.run_script(&s.setup)?;
    let origin = virtual_origin();
    let mut labels: BTreeMap<String, String> = BTreeMap::new();
    let mut oracle_subs = Vec::new();
    let mut expects = Vec::new();
    for ev in &s.timeline {
        if let ScenarioEvent::Expect { channel, execution, notifications } = &ev.event {
            expects.push((channel.clone(), *execution, notifications.clone()));
            continue;
        }
        engine.advance_to(origin + micros(ev.at));
        match &ev.event {
            ScenarioEvent::Statement { dsl } => {
                engine.run_script(dsl)?;
            }
            ScenarioEvent::Subscribe { channel, args, broker, label } => {
                let values = args.iter().map(Value::from_json).collect::<Result<Vec<_>>>()?;
                let id = engine.subscribe(channel, values, broker)?;
                labels.insert(id.clone(), label.clone());
                oracle_subs.push(OracleSubscription { id, label: label.clone(), oid: args.first().cloned().unwrap_or_default() });
            }
            ScenarioEvent::Ingest { feed, doc } => engine.ingest_value(feed, &Value::from_json(doc)?)?,
            ScenarioEvent::AdvanceClock { node, by } => {
                let nodes: Vec<usize> = match node {
                    Some(n) => vec![*n],
                    None => (0..engine.cluster().node_count()).collect(),
                };
                for n in nodes {
                    engine.cluster().advance_node(n, micros(*by));
                }
            }
            ScenarioEvent::DelayNextExecution { channel, by } => engine.delay_next_execution(channel, micros(*by))?,
            ScenarioEvent::StallNextExecution { channel, by } => engine.stall_next_execution(channel, micros(*by))?,
            ScenarioEvent::InjectVisibilityLag { dataset, by } => engine.inject_visibility_lag(dataset, micros(*by))?,
            ScenarioEvent::Expect { .. } => unreachable!(),
        }
    }
    engine.advance_to(origin + micros(s.until));

    let label_of = |id: &str| labels.get(id).cloned().unwrap_or_else(|| id.to_string());
    let mut executions = Vec::new();
    for (channel, index, want) in expects {
        let history = engine.channel_history(&channel)?;
        let actual: BTreeSet<(String, String)> = history
            .iter()
            .find(|r| r.index == index && r.success)
            .map(|r| r.notifications.iter().map(|n| (label_of(&n.subscription_id), key_of(&n.result, &s.result_key).to_string())).collect())
            .unwrap_or_default();
        let expected: BTreeSet<(String, String)> = want.iter().map(|(l, k)| (l.clone(), k.to_string())).collect();
        let back = |set: &BTreeSet<(String, String)>| set.iter().map(|(l, k)| (l.clone(), serde_json::from_str(k).unwrap())).collect();
        executions.push(ExecutionCheck { channel, index, pass: actual == expected, expected: back(&expected), actual: back(&actual) });
    }

    let oracle = s.oracle.as_ref().map(|spec| {
        let delivered: Vec<(String, serde_json::Value)> = engine
            .channel_history(&spec.channel)
            .unwrap_or_default()
            .iter()
            .filter(|r| r.success)
            .flat_map(|r| r.notifications.iter().map(|n| (n.subscription_id.clone(), key_of(&n.result, &s.result_key))))
            .collect();
        oracle::check(spec, &engine.cluster().events(), &oracle_subs, &delivered)
    });
    let pass = executions.iter().all(|e| e.pass);
    let report = ScenarioReport { scenario: s.name.clone(), executions, oracle, pass };
    Ok(ScenarioRun { engine, report })
}
