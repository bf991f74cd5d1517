//! The engine: catalog, statement execution, ingestion routing, channel
//! scheduling and result retrieval on top of a cluster.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::brokers::{validate_endpoint, HttpTransport, ResultSource, Transport};
use crate::channels::{
    execute_channel, result_key, results_dataset, subscriptions_dataset, ChannelRuntime, ChannelState, Delivery, ExecDeps,
    ExecutionRecord, BROKERS_DATASET,
};
use crate::cluster::{Cluster, ClusterConfig, PendingWrite, Placement};
use crate::dsl::{
    self, ChannelBody, CreateChannel, CreateFunction, CreateIndex, CreateType, FunctionBody, Query, Statement,
};
use crate::error::{EngineError, ErrorKind, Result};
use crate::ingestion::{
    add_ingestion_time, parse_record, start_socket_feed, FeedCounters, FeedDef, FeedHandle, FeedMode, LineSink,
    ADD_INGESTION_TIME, DEFAULT_FEED_CAPACITY,
};
use crate::planner::{
    self, compile, compile_expr, eval_standalone, explain, CompileOptions, ExecContext, ExplainHeader, PExpr,
};
use crate::storage::{DatasetDescriptor, WriteMode};
use crate::time::{format_datetime, parse_datetime};
use crate::value::{Document, Object, PkKey, Value};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub cluster: ClusterConfig,
    /// Apply the channel rewrites and predicate placement.
    pub optimize: bool,
    /// Run partition work on the rayon pool.
    pub parallel: bool,
    /// Bind TCP listeners for feeds that declare `sockets`.
    pub bind_feeds: bool,
}

impl EngineConfig {
    pub fn new(cluster: ClusterConfig) -> Self {
        EngineConfig { cluster, optimize: true, parallel: false, bind_feeds: false }
    }
}

/// Outcome of one statement.
#[derive(Debug, Clone, PartialEq)]
pub enum StatementResult {
    Done(String),
    Rows(Vec<Value>),
    Subscribed(String),
    Explain(String),
}

impl StatementResult {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            StatementResult::Done(msg) => json!({"ok": msg}),
            StatementResult::Rows(rows) => json!({"rows": rows.iter().map(Value::to_json).collect::<Vec<_>>()}),
            StatementResult::Subscribed(id) => json!({"subscription_id": id}),
            StatementResult::Explain(text) => json!({"plan": text}),
        }
    }

    pub fn rows(&self) -> &[Value] {
        match self {
            StatementResult::Rows(r) => r,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone)]
struct DatasetEntry {
    desc: Arc<DatasetDescriptor>,
    placement: Placement,
    /// Channel whose lifecycle owns this dataset.
    owner: Option<String>,
}

#[derive(Debug, Default)]
struct CatalogState {
    types: BTreeMap<String, CreateType>,
    datasets: BTreeMap<String, DatasetEntry>,
    functions: BTreeMap<String, CreateFunction>,
    indexes: BTreeMap<String, CreateIndex>,
}

impl planner::Catalog for CatalogState {
    fn dataset(&self, name: &str) -> Option<(Arc<DatasetDescriptor>, Placement)> {
        self.datasets.get(name).map(|e| (e.desc.clone(), e.placement))
    }
}

impl CatalogState {
    fn function(&self, name: &str) -> Option<&CreateFunction> {
        self.functions.get(name).or_else(|| self.functions.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, f)| f))
    }
}

#[derive(Debug, Clone)]
enum Transform {
    AddIngestionTime,
    Expr(PExpr),
}

struct FeedState {
    def: FeedDef,
    route: Option<Arc<FeedRoute>>,
    counters: Arc<FeedCounters>,
    handle: Option<FeedHandle>,
}

#[derive(Debug)]
struct FeedRoute {
    dataset: String,
    placement: Placement,
    pk_field: String,
    mode: WriteMode,
    transforms: Vec<Transform>,
}

pub struct Engine {
    cluster: Arc<Cluster>,
    catalog: RwLock<CatalogState>,
    channels: RwLock<BTreeMap<String, Arc<Mutex<ChannelRuntime>>>>,
    feeds: RwLock<BTreeMap<String, FeedState>>,
    /// Injected delay between feed acceptance and visibility, per dataset.
    lags: RwLock<BTreeMap<String, i64>>,
    transport: RwLock<Arc<dyn Transport>>,
    rng: Mutex<ChaCha8Rng>,
    config: EngineConfig,
    me: Weak<Engine>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Arc<Engine>> {
        let cluster = Arc::new(Cluster::boot(&config.cluster)?);
        let brokers = Arc::new(DatasetDescriptor::new(BROKERS_DATASET, "broker_name", false));
        cluster.create_partitions(&brokers)?;
        let mut catalog = CatalogState::default();
        catalog
            .datasets
            .insert(BROKERS_DATASET.into(), DatasetEntry { desc: brokers, placement: Placement::Replicated, owner: None });
        let seed = config.cluster.seed;
        Ok(Arc::new_cyclic(|me| Engine {
            cluster,
            catalog: RwLock::new(catalog),
            channels: RwLock::new(BTreeMap::new()),
            feeds: RwLock::new(BTreeMap::new()),
            lags: RwLock::new(BTreeMap::new()),
            transport: RwLock::new(Arc::new(HttpTransport::new(Duration::from_secs(5)))),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            config,
            me: me.clone(),
        }))
    }

    /// Single node, virtual clock.
    pub fn single() -> Arc<Engine> {
        Engine::new(EngineConfig::new(ClusterConfig::single())).expect("single-node boot")
    }

    pub fn cluster(&self) -> &Arc<Cluster> {
        &self.cluster
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn set_transport(&self, transport: Arc<dyn Transport>) {
        *self.transport.write() = transport;
    }

    fn fresh_uuid(&self) -> String {
        let mut bytes = [0u8; 16];
        self.rng.lock().fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes).into_uuid().to_string()
    }

    // ---- statements ----

    /// Parses and executes a script, stopping at the first failure. Errors
    /// carry the failing statement's position.
    pub fn run_script(&self, text: &str) -> Result<Vec<StatementResult>> {
        let mut out = Vec::new();
        for located in dsl::parse_located(text)? {
            out.push(self.execute(&located.statement).map_err(|e| e.at(located.location))?);
        }
        Ok(out)
    }

    pub fn execute(&self, stmt: &Statement) -> Result<StatementResult> {
        match stmt {
            Statement::CreateType(t) => {
                let mut cat = self.catalog.write();
                if cat.types.contains_key(&t.name) {
                    return Err(EngineError::duplicate("type", &t.name));
                }
                cat.types.insert(t.name.clone(), t.clone());
                Ok(StatementResult::Done(format!("type {} created", t.name)))
            }
            Statement::CreateDataset(d) => {
                let mut cat = self.catalog.write();
                if !cat.types.contains_key(&d.type_name) {
                    return Err(EngineError::compile(format!("type `{}` is not defined", d.type_name)));
                }
                let mut desc = DatasetDescriptor::new(&d.name, &d.primary_key, d.active);
                desc.type_name = Some(d.type_name.clone());
                self.create_dataset(&mut cat, desc, Placement::Hash, None)?;
                Ok(StatementResult::Done(format!("dataset {} created", d.name)))
            }
            Statement::CreateIndex(ix) => {
                let mut cat = self.catalog.write();
                if !cat.datasets.contains_key(&ix.dataset) {
                    return Err(EngineError::dataset_not_found(&ix.dataset));
                }
                if cat.indexes.contains_key(&ix.name) {
                    return Err(EngineError::duplicate("index", &ix.name));
                }
                cat.indexes.insert(ix.name.clone(), ix.clone());
                Ok(StatementResult::Done(format!("index {} created", ix.name)))
            }
            Statement::CreateFeed(f) => {
                let def = FeedDef::from_statement(f)?;
                let mut feeds = self.feeds.write();
                if feeds.contains_key(&f.name) {
                    return Err(EngineError::duplicate("feed", &f.name));
                }
                feeds.insert(f.name.clone(), FeedState { def, route: None, counters: Arc::default(), handle: None });
                Ok(StatementResult::Done(format!("feed {} created", f.name)))
            }
            Statement::ConnectFeed(c) => {
                let cat = self.catalog.read();
                let entry = cat.datasets.get(&c.dataset).ok_or_else(|| EngineError::dataset_not_found(&c.dataset))?;
                let transforms = match &c.function {
                    None => Vec::new(),
                    Some(name) => vec![self.transform(&cat, name)?],
                };
                let mut feeds = self.feeds.write();
                let feed = feeds.get_mut(&c.feed).ok_or_else(|| unknown("feed", &c.feed))?;
                feed.def.dataset = Some(c.dataset.clone());
                feed.def.transforms = c.function.iter().cloned().collect();
                feed.route = Some(Arc::new(FeedRoute {
                    dataset: c.dataset.clone(),
                    placement: entry.placement,
                    pk_field: entry.desc.primary_key_field.clone(),
                    mode: match feed.def.mode {
                        FeedMode::Insert => WriteMode::Insert,
                        FeedMode::Upsert => WriteMode::Upsert,
                    },
                    transforms,
                }));
                Ok(StatementResult::Done(format!("feed {} connected to {}", c.feed, c.dataset)))
            }
            Statement::StartFeed { feed } => {
                self.start_feed(feed)?;
                Ok(StatementResult::Done(format!("feed {feed} started")))
            }
            Statement::CreateBroker(b) => {
                validate_endpoint(&b.endpoint)?;
                let _cat = self.catalog.write();
                if self.broker_endpoint(&b.name)?.is_some() {
                    return Err(EngineError::duplicate("broker", &b.name));
                }
                self.write_broker(&b.name, &b.endpoint)?;
                Ok(StatementResult::Done(format!("broker {} created", b.name)))
            }
            Statement::AlterBroker(b) => {
                validate_endpoint(&b.endpoint)?;
                let _cat = self.catalog.write();
                if self.broker_endpoint(&b.name)?.is_none() {
                    return Err(broker_not_found(&b.name));
                }
                self.write_broker(&b.name, &b.endpoint)?;
                Ok(StatementResult::Done(format!("broker {} updated", b.name)))
            }
            Statement::CreateFunction(f) => {
                let mut cat = self.catalog.write();
                if cat.function(&f.name).is_some() {
                    return Err(EngineError::duplicate("function", &f.name));
                }
                match &f.body {
                    FunctionBody::Query(q) => {
                        compile(q, &f.params, &*cat, CompileOptions::ADHOC)?;
                    }
                    FunctionBody::Expr(e) => {
                        compile_expr(e, &f.params, &*cat)?;
                    }
                }
                cat.functions.insert(f.name.clone(), f.clone());
                Ok(StatementResult::Done(format!("function {} created", f.name)))
            }
            Statement::CreateChannel(c) => {
                self.create_channel(c)?;
                Ok(StatementResult::Done(format!("channel {} created", c.name)))
            }
            Statement::DropChannel { name } => {
                self.drop_channel(name)?;
                Ok(StatementResult::Done(format!("channel {name} dropped")))
            }
            Statement::Subscribe(s) => {
                let args = {
                    let cat = self.catalog.read();
                    s.args.iter().map(|a| self.constant(&cat, a)).collect::<Result<Vec<_>>>()?
                };
                self.subscribe(&s.channel, args, &s.broker).map(StatementResult::Subscribed)
            }
            Statement::Insert(ins) => {
                let cat = self.catalog.read();
                let entry = cat.datasets.get(&ins.dataset).ok_or_else(|| EngineError::dataset_not_found(&ins.dataset))?;
                let mode = if ins.upsert { WriteMode::Upsert } else { WriteMode::Insert };
                let docs = ins
                    .docs
                    .iter()
                    .map(|e| Document::from_value(self.constant(&cat, e)?, &entry.desc.primary_key_field))
                    .collect::<Result<Vec<_>>>()?;
                let n = docs.len();
                for doc in docs {
                    self.cluster.write(&ins.dataset, entry.placement, doc, mode, true)?;
                }
                Ok(StatementResult::Done(format!("{n} record(s) written to {}", ins.dataset)))
            }
            Statement::Query(q) => self.query(q).map(StatementResult::Rows),
            Statement::Invoke { function, args } => {
                let cat = self.catalog.read();
                let args = args.iter().map(|a| self.constant(&cat, a)).collect::<Result<Vec<_>>>()?;
                drop(cat);
                self.invoke(function, args).map(StatementResult::Rows)
            }
            Statement::Explain(inner) => self.explain(inner).map(StatementResult::Explain),
        }
    }

    fn create_dataset(&self, cat: &mut CatalogState, desc: DatasetDescriptor, placement: Placement, owner: Option<String>) -> Result<()> {
        if cat.datasets.contains_key(&desc.name) {
            return Err(EngineError::duplicate("dataset", &desc.name));
        }
        let desc = Arc::new(desc);
        self.cluster.create_partitions(&desc)?;
        cat.datasets.insert(desc.name.clone(), DatasetEntry { desc, placement, owner });
        Ok(())
    }

    /// Evaluates an expression that may not read any dataset.
    fn constant(&self, cat: &CatalogState, e: &dsl::Expr) -> Result<Value> {
        let p = compile_expr(e, &[], cat)?;
        Ok(eval_standalone(&p, &[], self.cluster.now()))
    }

    fn transform(&self, cat: &CatalogState, name: &str) -> Result<Transform> {
        if name.eq_ignore_ascii_case(ADD_INGESTION_TIME) {
            return Ok(Transform::AddIngestionTime);
        }
        let f = cat.function(name).ok_or_else(|| EngineError::compile(format!("unknown function `{name}`")))?;
        match &f.body {
            FunctionBody::Expr(e) if f.params.len() == 1 => Ok(Transform::Expr(compile_expr(e, &f.params, cat)?)),
            _ => Err(EngineError::compile(format!("`{name}` is not a one-argument expression function"))),
        }
    }

    fn broker_endpoint(&self, name: &str) -> Result<Option<String>> {
        let pk = PkKey::from_value(&Value::str(name))?;
        let doc = self.cluster.get(BROKERS_DATASET, Placement::Replicated, &pk)?;
        Ok(doc.and_then(|d| d.get("broker_end_point").and_then(|v| v.as_str()).map(str::to_string)))
    }

    fn write_broker(&self, name: &str, endpoint: &str) -> Result<()> {
        let mut o = Object::new();
        o.insert("dataverse_name".into(), Value::str(crate::DEFAULT_DATAVERSE));
        o.insert("broker_name".into(), Value::str(name));
        o.insert("broker_end_point".into(), Value::str(endpoint));
        self.cluster.write(BROKERS_DATASET, Placement::Replicated, Document::new(o, "broker_name")?, WriteMode::Upsert, false)?;
        Ok(())
    }

    /// Registered brokers as (name, endpoint), by name.
    pub fn brokers(&self) -> Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = self
            .cluster
            .snapshots(BROKERS_DATASET, Placement::Replicated)?
            .into_iter()
            .flat_map(|(_, snap)| snap.scan(&crate::storage::ScanWindow::FULL))
            .filter_map(|r| {
                let n = r.doc.get("broker_name")?.as_str()?.to_string();
                let e = r.doc.get("broker_end_point")?.as_str()?.to_string();
                Some((n, e))
            })
            .collect();
        out.sort();
        Ok(out)
    }

    pub fn dataset_names(&self) -> Vec<String> {
        self.catalog.read().datasets.keys().cloned().collect()
    }

    pub fn has_dataset(&self, name: &str) -> bool {
        self.catalog.read().datasets.contains_key(name)
    }

    pub fn dataset_placement(&self, name: &str) -> Option<Placement> {
        self.catalog.read().datasets.get(name).map(|e| e.placement)
    }

    // ---- channels ----

    /// Compiles a channel definition without creating anything.
    fn compile_channel(&self, cat: &CatalogState, c: &CreateChannel) -> Result<(Vec<String>, planner::CompiledQuery)> {
        let (params, query) = match &c.body {
            ChannelBody::Inline(q) => (c.params.clone().unwrap_or_default(), q.clone()),
            ChannelBody::Using { function, arity } => {
                let f = cat.function(function).ok_or_else(|| EngineError::compile(format!("unknown function `{function}`")))?;
                let FunctionBody::Query(q) = &f.body else {
                    return Err(EngineError::compile(format!("`{function}` is not a query function")));
                };
                if f.params.len() != *arity {
                    return Err(EngineError::compile(format!(
                        "`{function}` takes {} parameter(s), channel declares {arity}",
                        f.params.len()
                    )));
                }
                (f.params.clone(), q.clone())
            }
        };
        if c.period_micros <= 0 {
            return Err(EngineError::compile("channel period must be positive"));
        }
        let plan = compile(&query, &params, cat, CompileOptions { channel: true, optimize: self.config.optimize })?;
        Ok((params, plan))
    }

    fn create_channel(&self, c: &CreateChannel) -> Result<()> {
        let mut cat = self.catalog.write();
        let mut channels = self.channels.write();
        if channels.contains_key(&c.name) {
            return Err(EngineError::duplicate("channel", &c.name));
        }
        let (params, plan) = self.compile_channel(&cat, c)?;
        let subs = subscriptions_dataset(&c.name);
        let results = results_dataset(&c.name);
        for d in [&subs, &results] {
            if cat.datasets.contains_key(d) {
                return Err(EngineError::duplicate("dataset", d));
            }
        }
        self.create_dataset(&mut cat, DatasetDescriptor::new(&subs, "subscription_id", false), Placement::Hash, Some(c.name.clone()))?;
        if !c.push {
            self.create_dataset(&mut cat, DatasetDescriptor::new(&results, "result_id", false), Placement::Hash, Some(c.name.clone()))?;
        }
        self.cluster.init_channel(&c.name);
        let rt = ChannelRuntime::new(&c.name, c.kind, c.push, c.period_micros, params, plan, self.cluster.now());
        channels.insert(c.name.clone(), Arc::new(Mutex::new(rt)));
        Ok(())
    }

    fn drop_channel(&self, name: &str) -> Result<()> {
        let mut cat = self.catalog.write();
        let rt = self.channels.write().remove(name).ok_or_else(|| unknown("channel", name))?;
        let _running = rt.lock();
        let owned: Vec<String> =
            cat.datasets.iter().filter(|(_, e)| e.owner.as_deref() == Some(name)).map(|(k, _)| k.clone()).collect();
        for d in owned {
            cat.datasets.remove(&d);
            self.cluster.drop_partitions(&d);
        }
        self.cluster.remove_channel(name);
        Ok(())
    }

    pub fn subscribe(&self, channel: &str, args: Vec<Value>, broker: &str) -> Result<String> {
        let arity = {
            let channels = self.channels.read();
            let rt = channels.get(channel).ok_or_else(|| EngineError::dataset_not_found(&subscriptions_dataset(channel)))?;
            let arity = rt.lock().params.len();
            arity
        };
        if args.len() != arity {
            return Err(EngineError::compile(format!("channel `{channel}` takes {arity} argument(s), got {}", args.len())));
        }
        if self.broker_endpoint(broker)?.is_none() {
            return Err(broker_not_found(broker));
        }
        let id = self.fresh_uuid();
        let mut o = Object::new();
        o.insert("subscription_id".into(), Value::str(id.clone()));
        o.insert("broker_name".into(), Value::str(broker));
        o.insert("dataverse_name".into(), Value::str(crate::DEFAULT_DATAVERSE));
        for (i, a) in args.into_iter().enumerate() {
            o.insert(format!("param{i}"), a);
        }
        let doc = Document::new(o, "subscription_id")?;
        self.cluster.write(&subscriptions_dataset(channel), Placement::Hash, doc, WriteMode::Insert, false)?;
        Ok(id)
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.read().keys().cloned().collect()
    }

    fn runtime(&self, channel: &str) -> Result<Arc<Mutex<ChannelRuntime>>> {
        self.channels.read().get(channel).cloned().ok_or_else(|| unknown("channel", channel))
    }

    pub fn channel_history(&self, channel: &str) -> Result<Vec<ExecutionRecord>> {
        Ok(self.runtime(channel)?.lock().history.clone())
    }

    pub fn channel_state(&self, channel: &str) -> Result<ChannelState> {
        Ok(self.runtime(channel)?.lock().state)
    }

    pub fn channel_delivery(&self, channel: &str) -> Result<Delivery> {
        Ok(self.runtime(channel)?.lock().delivery)
    }

    pub fn channel_period(&self, channel: &str) -> Result<i64> {
        Ok(self.runtime(channel)?.lock().period)
    }

    /// Postpones only the next dispatch; later ticks keep the fixed rate.
    pub fn delay_next_execution(&self, channel: &str, micros: i64) -> Result<()> {
        self.runtime(channel)?.lock().pending_delay += micros;
        Ok(())
    }

    /// Makes the next execution take `micros` of simulated time.
    pub fn stall_next_execution(&self, channel: &str, micros: i64) -> Result<()> {
        self.runtime(channel)?.lock().pending_stall += micros;
        Ok(())
    }

    fn deps(&self) -> (Arc<dyn Transport>, bool) {
        (self.transport.read().clone(), self.config.parallel)
    }

    /// Runs one execution of a channel now, outside its schedule.
    pub fn execute_channel_now(&self, channel: &str) -> Result<ExecutionRecord> {
        let rt = self.runtime(channel)?;
        let mut rt = rt.lock();
        if !rt.is_running() {
            return Err(EngineError::new(ErrorKind::ChannelOverrun, format!("channel `{channel}` is terminated")));
        }
        let (transport, parallel) = self.deps();
        let deps = ExecDeps { cluster: &self.cluster, transport: &*transport, parallel };
        Ok(execute_channel(&mut rt, &deps).clone())
    }

    /// Earliest pending event: a parked write or a channel dispatch.
    fn next_event(&self) -> Option<i64> {
        let channels = self.channels.read();
        let dispatch = channels.values().filter_map(|c| {
            let c = c.lock();
            c.is_running().then(|| c.dispatch_at())
        });
        dispatch.chain(self.cluster.next_pending_due()).min()
    }

    /// Releases due writes, then dispatches every channel due at `now`.
    /// Returns the executions performed.
    pub fn run_due(&self, now: i64) -> Vec<(String, ExecutionRecord)> {
        for r in self.cluster.release_pending(now) {
            if let Err(e) = r {
                log::warn!("parked write rejected: {e}");
            }
        }
        let due: Vec<(String, Arc<Mutex<ChannelRuntime>>)> = self
            .channels
            .read()
            .iter()
            .filter(|(_, c)| {
                let c = c.lock();
                c.is_running() && c.dispatch_at() <= now
            })
            .map(|(k, c)| (k.clone(), c.clone()))
            .collect();
        let (transport, parallel) = self.deps();
        let deps = ExecDeps { cluster: &self.cluster, transport: &*transport, parallel };
        let mut out = Vec::new();
        for (name, rt) in due {
            let mut rt = rt.lock();
            if rt.is_running() && rt.dispatch_at() <= now {
                out.push((name, execute_channel(&mut rt, &deps).clone()));
            }
        }
        out
    }

    /// Advances virtual time by `micros`, firing parked writes and channel
    /// ticks in time order. Writes go first when both fall on one instant.
    pub fn advance(&self, micros: i64) -> Vec<(String, ExecutionRecord)> {
        let target = self.cluster.now() + micros;
        self.advance_to(target)
    }

    pub fn advance_to(&self, target: i64) -> Vec<(String, ExecutionRecord)> {
        let mut out = Vec::new();
        while let Some(t) = self.next_event().filter(|t| *t <= target) {
            self.cluster.advance_to(t);
            out.extend(self.run_due(t.max(self.cluster.now())));
        }
        self.cluster.advance_to(target);
        out.extend(self.run_due(self.cluster.now()));
        out
    }

    /// Fires due work on the real clock until the handle is dropped.
    pub fn start_scheduler(&self, tick: Duration) -> SchedulerHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let me = self.me.clone();
        let flag = stop.clone();
        let thread = std::thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                let Some(engine) = me.upgrade() else { break };
                engine.run_due(engine.cluster.now());
                drop(engine);
                std::thread::sleep(tick);
            }
        });
        SchedulerHandle { stop, thread: Some(thread) }
    }

    // ---- results ----

    /// Results persisted for one subscription by one lazy execution.
    pub fn pull(&self, channel: &str, execution_time: &str, subscription_id: &str) -> Result<Vec<Value>> {
        let dataset = results_dataset(channel);
        if !self.has_dataset(&dataset) {
            return Err(EngineError::dataset_not_found(&dataset));
        }
        let iso = format_datetime(parse_datetime(execution_time)?);
        let pk = PkKey::from_value(&Value::str(result_key(&iso, subscription_id)))?;
        let doc = self.cluster.get(&dataset, Placement::Hash, &pk)?;
        Ok(match doc.and_then(|d| d.get("results").cloned()) {
            Some(Value::Array(items)) => items,
            _ => Vec::new(),
        })
    }

    /// A result source for brokers running in this process.
    pub fn result_source(&self) -> Arc<dyn ResultSource> {
        Arc::new(EngineSource(self.me.clone()))
    }

    // ---- queries ----

    pub fn query(&self, q: &Query) -> Result<Vec<Value>> {
        let plan = {
            let cat = self.catalog.read();
            compile(q, &[], &*cat, CompileOptions { channel: false, optimize: self.config.optimize })?
        };
        Ok(self.run_adhoc(&plan, &[]))
    }

    fn run_adhoc(&self, plan: &planner::CompiledQuery, params: &[Value]) -> Vec<Value> {
        let datasets: Vec<String> = plan.datasets().into_iter().map(|(d, _)| d).collect();
        let now = self.cluster.now();
        let inputs: Vec<_> = (0..self.cluster.node_count()).map(|n| self.cluster.snapshot_input(n, &datasets)).collect();
        let ctx = ExecContext {
            inputs: &inputs,
            now,
            params,
            subs: &[],
            cross: self.cluster.cross_node_comparisons(),
            parallel: self.config.parallel,
        };
        planner::execute(plan, &ctx).rows.into_iter().map(|r| r.value).collect()
    }

    /// Calls a stored function with constant arguments.
    pub fn invoke(&self, function: &str, args: Vec<Value>) -> Result<Vec<Value>> {
        let cat = self.catalog.read();
        let f = cat.function(function).ok_or_else(|| EngineError::compile(format!("unknown function `{function}`")))?;
        if f.params.len() != args.len() {
            return Err(EngineError::compile(format!("`{function}` takes {} argument(s), got {}", f.params.len(), args.len())));
        }
        match &f.body {
            FunctionBody::Query(q) => {
                let plan = compile(q, &f.params, &*cat, CompileOptions { channel: false, optimize: self.config.optimize })?;
                drop(cat);
                Ok(self.run_adhoc(&plan, &args))
            }
            FunctionBody::Expr(e) => {
                let p = compile_expr(e, &f.params, &*cat)?;
                Ok(vec![eval_standalone(&p, &args, self.cluster.now())])
            }
        }
    }

    pub fn explain(&self, stmt: &Statement) -> Result<String> {
        let cat = self.catalog.read();
        match stmt {
            Statement::Query(q) => {
                let plan = compile(q, &[], &*cat, CompileOptions { channel: false, optimize: self.config.optimize })?;
                Ok(explain(&plan, &ExplainHeader::Query, None))
            }
            Statement::CreateChannel(c) => {
                let (_, plan) = self.compile_channel(&cat, c)?;
                Ok(explain(&plan, &ExplainHeader::Channel { name: c.name.clone(), kind: c.kind, push: c.push }, None))
            }
            Statement::Explain(inner) => self.explain(inner),
            other => Err(EngineError::compile(format!("cannot explain {}", dsl::print_statement(other).lines().next().unwrap_or("")))),
        }
    }

    // ---- ingestion ----

    fn start_feed(&self, name: &str) -> Result<()> {
        let mut feeds = self.feeds.write();
        let feed = feeds.get_mut(name).ok_or_else(|| unknown("feed", name))?;
        let route = feed.route.clone().ok_or_else(|| EngineError::compile(format!("feed `{name}` is not connected to a dataset")))?;
        if feed.def.started {
            return Ok(());
        }
        if let (true, Some(addr)) = (self.config.bind_feeds, feed.def.socket.clone()) {
            let me = self.me.clone();
            let sink: Arc<LineSink> = Arc::new(move |line: &str| match me.upgrade() {
                Some(engine) => engine.ingest_routed(&route, line),
                None => Err(EngineError::io("engine stopped")),
            });
            feed.handle = Some(start_socket_feed(&addr, DEFAULT_FEED_CAPACITY, feed.counters.clone(), sink)?);
        }
        feed.def.started = true;
        Ok(())
    }

    /// Address of a feed's TCP listener, when bound.
    pub fn feed_addr(&self, feed: &str) -> Option<std::net::SocketAddr> {
        self.feeds.read().get(feed).and_then(|f| f.handle.as_ref().map(|h| h.addr))
    }

    pub fn feed_counters(&self, feed: &str) -> Result<crate::ingestion::CounterValues> {
        Ok(self.feeds.read().get(feed).ok_or_else(|| unknown("feed", feed))?.counters.values())
    }

    pub fn feed_def(&self, feed: &str) -> Option<FeedDef> {
        self.feeds.read().get(feed).map(|f| f.def.clone())
    }

    /// Accepts one JSON line through a connected feed.
    pub fn ingest(&self, feed: &str, line: &str) -> Result<()> {
        let (route, counters) = {
            let feeds = self.feeds.read();
            let f = feeds.get(feed).ok_or_else(|| unknown("feed", feed))?;
            let route = f.route.clone().ok_or_else(|| EngineError::compile(format!("feed `{feed}` is not connected to a dataset")))?;
            (route, f.counters.clone())
        };
        counters.accepted.fetch_add(1, Ordering::SeqCst);
        let r = self.ingest_routed(&route, line);
        match &r {
            Ok(()) => counters.persisted.fetch_add(1, Ordering::SeqCst),
            Err(_) => counters.rejected.fetch_add(1, Ordering::SeqCst),
        };
        r
    }

    pub fn ingest_value(&self, feed: &str, record: &Value) -> Result<()> {
        self.ingest(feed, &record.to_json_string())
    }

    fn ingest_routed(&self, route: &FeedRoute, line: &str) -> Result<()> {
        let mut record = parse_record(line)?;
        let key = record.get(&route.pk_field).ok_or_else(|| EngineError::malformed(format!("record lacks primary key `{}`", route.pk_field)))?;
        let pk = PkKey::from_value(key)?;
        let node = match route.placement {
            Placement::Hash => self.cluster.node_for(&pk),
            Placement::Replicated => 0,
        };
        let now = self.cluster.nodes()[node].clock.reading();
        for t in &route.transforms {
            record = match t {
                Transform::AddIngestionTime => add_ingestion_time(record, now),
                Transform::Expr(e) => match eval_standalone(e, &[Value::Object(record)], now) {
                    Value::Object(o) => o,
                    other => return Err(EngineError::malformed(format!("transform produced {}", other.type_name()))),
                },
            };
        }
        let doc = Document::new(record, &route.pk_field)?;
        if doc.pk() != &pk {
            return Err(EngineError::malformed("transform changed the primary key"));
        }
        let lag = self.lags.read().get(&route.dataset).copied().unwrap_or(0);
        if lag > 0 && route.placement == Placement::Hash {
            self.cluster.park(PendingWrite { due: self.cluster.now() + lag, node, dataset: route.dataset.clone(), doc, mode: route.mode });
            return Ok(());
        }
        self.cluster.write(&route.dataset, route.placement, doc, route.mode, true)?;
        Ok(())
    }

    /// Delays visibility of feed records for a dataset by `micros`.
    pub fn inject_visibility_lag(&self, dataset: &str, micros: i64) -> Result<()> {
        if !self.has_dataset(dataset) {
            return Err(EngineError::dataset_not_found(dataset));
        }
        self.lags.write().insert(dataset.to_string(), micros);
        Ok(())
    }
}

fn unknown(what: &str, name: &str) -> EngineError {
    EngineError::compile(format!("{what} `{name}` does not exist"))
}

fn broker_not_found(name: &str) -> EngineError {
    EngineError::new(ErrorKind::BrokerNotFound, format!("broker `{name}` does not exist"))
}

pub struct SchedulerHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Drop for SchedulerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

struct EngineSource(Weak<Engine>);

impl ResultSource for EngineSource {
    fn pull(&self, channel: &str, execution_time: &str, subscription_id: &str) -> Result<Vec<serde_json::Value>> {
        let engine = self.0.upgrade().ok_or_else(|| EngineError::io("engine stopped"))?;
        Ok(engine.pull(channel, execution_time, subscription_id)?.iter().map(Value::to_json).collect())
    }
}

#[cfg(test)]
mod tests;
