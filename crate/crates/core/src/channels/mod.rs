//! Channel runtime: periodic execution over per-node time windows, result
//! materialization and hand-off to brokers.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::brokers::{join_url, NotifyMessage, PushedResult, ResultsMessage, Transport};
use crate::cluster::{Cluster, NodeInput, Placement};
use crate::dsl::ChannelKind;
use crate::error::{EngineError, ErrorKind, Result};
use crate::planner::{execute, load_subscriptions, CompiledQuery, ExecContext};
use crate::storage::WriteMode;
use crate::time::format_datetime;
use crate::value::{Document, Object, Value};

/// Name of the replicated broker registry dataset.
pub const BROKERS_DATASET: &str = "Brokers";

pub fn subscriptions_dataset(channel: &str) -> String {
    format!("{channel}Subscriptions")
}

pub fn results_dataset(channel: &str) -> String {
    format!("{channel}Results")
}

/// Primary key of a lazy-mode result row.
pub fn result_key(execution_time: &str, subscription_id: &str) -> String {
    format!("{execution_time}|{subscription_id}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Delivery {
    EagerPush,
    LazyPull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelState {
    Running,
    Terminated,
}

/// One result row addressed to one subscription.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Notification {
    pub channel: String,
    pub execution_time: i64,
    pub subscription_id: String,
    pub broker_name: String,
    pub broker_endpoint: String,
    pub result: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub load_subscriptions: Duration,
    pub load_new_data: Duration,
    pub join: Duration,
    pub persist_results: Duration,
    pub deliver: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.load_subscriptions + self.load_new_data + self.join + self.persist_results + self.deliver
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExecutionRecord {
    /// 1-based.
    pub index: u64,
    /// Coordinator time at dispatch.
    pub time: i64,
    pub success: bool,
    pub notifications: Vec<Notification>,
    pub timings: StageTimings,
    pub error: Option<String>,
    pub delivery_errors: Vec<String>,
}

#[derive(Debug)]
pub struct ChannelRuntime {
    pub name: String,
    pub kind: ChannelKind,
    pub delivery: Delivery,
    pub period: i64,
    pub params: Vec<String>,
    pub plan: CompiledQuery,
    pub state: ChannelState,
    pub executions: u64,
    /// Next fixed-rate tick in coordinator time.
    pub next_due: i64,
    /// Extra delay applied to the next dispatch only.
    pub pending_delay: i64,
    /// Simulated run time of the next execution (virtual clocks).
    pub pending_stall: i64,
    pub history: Vec<ExecutionRecord>,
}

impl ChannelRuntime {
    pub fn new(name: &str, kind: ChannelKind, push: bool, period: i64, params: Vec<String>, plan: CompiledQuery, created_at: i64) -> Self {
        ChannelRuntime {
            name: name.to_string(),
            kind,
            delivery: if push { Delivery::EagerPush } else { Delivery::LazyPull },
            period,
            params,
            plan,
            state: ChannelState::Running,
            executions: 0,
            next_due: created_at + period,
            pending_delay: 0,
            pending_stall: 0,
            history: Vec::new(),
        }
    }

    /// When the next execution is actually dispatched.
    pub fn dispatch_at(&self) -> i64 {
        self.next_due + self.pending_delay
    }

    pub fn is_running(&self) -> bool {
        self.state == ChannelState::Running
    }
}

pub struct ExecDeps<'a> {
    pub cluster: &'a Cluster,
    pub transport: &'a dyn Transport,
    pub parallel: bool,
}

/// Broker name to endpoint, read from node 0's replica.
fn broker_endpoints(inputs: &[NodeInput]) -> HashMap<String, String> {
    let mut out = HashMap::new();
    if let Some(snap) = inputs.first().and_then(|i| i.snapshots.get(BROKERS_DATASET)) {
        for rec in snap.scan(&crate::storage::ScanWindow::FULL) {
            let name = rec.doc.get("broker_name").and_then(|v| v.as_str());
            let ep = rec.doc.get("broker_end_point").and_then(|v| v.as_str());
            if let (Some(n), Some(e)) = (name, ep) {
                out.insert(n.to_string(), e.to_string());
            }
        }
    }
    out
}

/// Runs one execution at the current coordinator time and advances the tick.
pub fn execute_channel<'r>(rt: &'r mut ChannelRuntime, deps: &ExecDeps) -> &'r ExecutionRecord {
    let cluster = deps.cluster;
    let exec_time = cluster.now();
    rt.executions += 1;
    let index = rt.executions;
    let stall = std::mem::take(&mut rt.pending_stall);
    rt.pending_delay = 0;
    let mut record = ExecutionRecord {
        index,
        time: exec_time,
        success: false,
        notifications: Vec::new(),
        timings: StageTimings::default(),
        error: None,
        delivery_errors: Vec::new(),
    };
    let started = Instant::now();
    let outcome = run(rt, deps, exec_time, index, &mut record);
    let elapsed = if cluster.is_virtual() { stall } else { started.elapsed().as_micros() as i64 + stall };
    match outcome {
        Ok(inputs) if elapsed < rt.period => {
            for input in &inputs {
                cluster.commit(input.node, &rt.name, input.curr);
            }
            record.success = true;
            cluster.log_execution(&rt.name, index, exec_time, true);
            deliver(rt, deps, &mut record);
        }
        Ok(_) => {
            rt.state = ChannelState::Terminated;
            record.notifications.clear();
            record.error = Some(EngineError::new(ErrorKind::ChannelOverrun, format!("execution {index} of `{}` ran past its successor's tick", rt.name)).to_string());
            cluster.log_execution(&rt.name, index, exec_time, false);
        }
        Err(e) => {
            record.notifications.clear();
            record.error = Some(e.to_string());
            cluster.log_execution(&rt.name, index, exec_time, false);
        }
    }
    while rt.next_due <= exec_time {
        rt.next_due += rt.period;
    }
    rt.history.push(record);
    rt.history.last().unwrap()
}

fn run(rt: &ChannelRuntime, deps: &ExecDeps, exec_time: i64, index: u64, record: &mut ExecutionRecord) -> Result<Vec<NodeInput>> {
    let cluster = deps.cluster;
    let subs_ds = subscriptions_dataset(&rt.name);
    let mut datasets: Vec<String> = rt.plan.datasets().into_iter().map(|(d, _)| d).collect();
    datasets.push(subs_ds.clone());
    datasets.push(BROKERS_DATASET.to_string());
    let inputs = (0..cluster.node_count())
        .map(|n| cluster.sample(n, &rt.name, index, &datasets))
        .collect::<Result<Vec<_>>>()?;

    let t = Instant::now();
    let subs = load_subscriptions(&inputs, &subs_ds, rt.params.len());
    record.timings.load_subscriptions = t.elapsed();

    let ctx = ExecContext { inputs: &inputs, now: exec_time, params: &[], subs: &subs, cross: cluster.cross_node_comparisons(), parallel: deps.parallel };
    let out = execute(&rt.plan, &ctx);
    record.timings.load_new_data = out.load_new_data;
    record.timings.join = out.join;

    let endpoints = broker_endpoints(&inputs);
    let mut notes: Vec<Notification> = out
        .rows
        .into_iter()
        .filter_map(|row| {
            let sub = &subs[row.sub?];
            Some(Notification {
                channel: rt.name.clone(),
                execution_time: exec_time,
                subscription_id: sub.id.clone(),
                broker_name: sub.broker.clone(),
                broker_endpoint: endpoints.get(&sub.broker).cloned().unwrap_or_default(),
                result: row.value,
            })
        })
        .collect();
    notes.sort_by(|a, b| a.subscription_id.cmp(&b.subscription_id));

    if rt.delivery == Delivery::LazyPull {
        let t = Instant::now();
        persist(cluster, &rt.name, exec_time, &notes)?;
        record.timings.persist_results = t.elapsed();
    }
    record.notifications = notes;
    Ok(inputs)
}

fn persist(cluster: &Cluster, channel: &str, exec_time: i64, notes: &[Notification]) -> Result<()> {
    let iso = format_datetime(exec_time);
    let dataset = results_dataset(channel);
    let mut grouped: BTreeMap<&str, (&Notification, Vec<Value>)> = BTreeMap::new();
    for n in notes {
        grouped.entry(&n.subscription_id).or_insert_with(|| (n, Vec::new())).1.push(n.result.clone());
    }
    for (sub, (first, results)) in grouped {
        let mut o = Object::new();
        o.insert("result_id".into(), Value::str(result_key(&iso, sub)));
        o.insert("channel_execution_time".into(), Value::Datetime(exec_time));
        o.insert("subscription_id".into(), Value::str(sub));
        o.insert("broker_name".into(), Value::str(first.broker_name.clone()));
        o.insert("results".into(), Value::Array(results));
        cluster.write(&dataset, Placement::Hash, Document::new(o, "result_id")?, WriteMode::Upsert, false)?;
    }
    Ok(())
}

fn deliver(rt: &ChannelRuntime, deps: &ExecDeps, record: &mut ExecutionRecord) {
    let t = Instant::now();
    let iso = format_datetime(record.time);
    let mut by_endpoint: BTreeMap<&str, Vec<&Notification>> = BTreeMap::new();
    for n in &record.notifications {
        by_endpoint.entry(&n.broker_endpoint).or_default().push(n);
    }
    let mut errors = Vec::new();
    for (endpoint, notes) in by_endpoint {
        if endpoint.is_empty() {
            errors.push(format!("broker `{}` is not registered", notes[0].broker_name));
            continue;
        }
        let sent = match rt.delivery {
            Delivery::EagerPush => {
                let msg = ResultsMessage {
                    channel: rt.name.clone(),
                    execution_time: iso.clone(),
                    notifications: notes
                        .iter()
                        .map(|n| PushedResult { subscription_id: n.subscription_id.clone(), result: n.result.to_json() })
                        .collect(),
                };
                deps.transport.post(&join_url(endpoint, "results"), &serde_json::to_value(msg).unwrap())
            }
            Delivery::LazyPull => {
                let mut ids: Vec<String> = notes.iter().map(|n| n.subscription_id.clone()).collect();
                ids.dedup();
                let msg = NotifyMessage { channel: rt.name.clone(), execution_time: iso.clone(), subscription_ids: ids };
                deps.transport.post(&join_url(endpoint, "notify"), &serde_json::to_value(msg).unwrap())
            }
        };
        if let Err(e) = sent {
            log::warn!("delivery for `{}` to {endpoint} failed: {e}", rt.name);
            errors.push(e.to_string());
        }
    }
    record.delivery_errors = errors;
    record.timings.deliver = t.elapsed();
}
