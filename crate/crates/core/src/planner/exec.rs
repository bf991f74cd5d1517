use std::cmp::Ordering;
use std::collections::HashMap;
use std::hash::Hasher;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::cluster::{NodeInput, Placement};
use crate::storage::ScanWindow;
use crate::time::ActiveTimestamp;
use crate::value::{compare_values, Value};

use super::expr::{eval, eval_bool, hash_key, Bound, Env, LookupTable, PExpr, Row, Times};
use super::{CompiledQuery, DataJoin, Output, Source, TimeBound};

#[derive(Debug, Clone, PartialEq)]
pub struct SubRow {
    pub id: String,
    pub broker: String,
    pub params: Vec<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinStrategy {
    /// Both sides repartitioned on the equi keys; the smaller side is built.
    Hash { build: Side },
    /// The smaller side is copied to every partition of the other.
    BroadcastNestedLoop { broadcast: Side },
}

/// Picks the join algorithm from estimated input sizes. Ties go left.
pub fn choose_join_strategy(join: &DataJoin, left: usize, right: usize) -> JoinStrategy {
    let smaller = if right < left { Side::Right } else { Side::Left };
    if join.equi.is_empty() {
        JoinStrategy::BroadcastNestedLoop { broadcast: smaller }
    } else {
        JoinStrategy::Hash { build: smaller }
    }
}

pub struct ExecContext<'a> {
    pub inputs: &'a [NodeInput],
    pub now: i64,
    /// Constant parameters when the plan has no subscription join.
    pub params: &'a [Value],
    pub subs: &'a [SubRow],
    pub cross: &'a AtomicU64,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    /// Index into the subscriptions passed in.
    pub sub: Option<usize>,
    pub value: Value,
}

#[derive(Debug, Clone)]
pub struct ExecOutput {
    pub rows: Vec<ResultRow>,
    pub strategy: Option<JoinStrategy>,
    pub scanned: usize,
    pub load_new_data: Duration,
    pub join: Duration,
}

/// Reads subscription rows from every partition, ordered by id.
pub fn load_subscriptions(inputs: &[NodeInput], dataset: &str, nparams: usize) -> Vec<SubRow> {
    let mut out = Vec::new();
    for input in inputs {
        let Some(snap) = input.snapshots.get(dataset) else { continue };
        for rec in snap.scan(&ScanWindow::FULL) {
            let d = &rec.doc;
            let text = |f: &str| d.get(f).and_then(|v| v.as_str()).unwrap_or_default().to_string();
            out.push(SubRow {
                id: text("subscription_id"),
                broker: text("broker_name"),
                params: (0..nparams).map(|i| d.get(&format!("param{i}")).cloned().unwrap_or(Value::Null)).collect(),
            });
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

fn pmap<T: Sync, R: Send>(items: &[T], parallel: bool, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn bucket_of(key: &str, buckets: usize) -> usize {
    let mut h = fnv::FnvHasher::default();
    h.write(key.as_bytes());
    (h.finish() % buckets as u64) as usize
}

struct Shared<'a> {
    plan: &'a CompiledQuery,
    ctx: &'a ExecContext<'a>,
    times: Times,
    lookups: Vec<LookupTable>,
}

impl Shared<'_> {
    fn env<'b>(&'b self, row: &'b [Option<Arc<Bound>>], params: &'b [Value], aggs: &'b [i64]) -> Env<'b> {
        Env { row, extra: None, params, now: self.ctx.now, times: self.times, aggs, lookups: &self.lookups, cross: self.ctx.cross }
    }

    fn params_for(&self, sub: Option<usize>) -> &[Value] {
        match sub {
            Some(i) => &self.ctx.subs[i].params,
            None => self.ctx.params,
        }
    }
}

fn inputs_for(placement: Placement, inputs: &[NodeInput]) -> &[NodeInput] {
    match placement {
        Placement::Hash => inputs,
        Placement::Replicated => &inputs[..inputs.len().min(1)],
    }
}

fn window(src: &Source, input: &NodeInput) -> ScanWindow {
    let pick = |b: TimeBound| match b {
        TimeBound::Prev => input.prev,
        TimeBound::Curr => input.curr,
    };
    ScanWindow { lower: src.lower.map(pick), upper: src.upper.map(pick) }
}

/// Scans one source on one node and applies its local filter.
fn scan(sh: &Shared, src: &Source, input: &NodeInput) -> Vec<Row> {
    let Some(snap) = input.snapshots.get(&src.dataset) else { return Vec::new() };
    let slots = sh.plan.slots();
    let mut out = Vec::new();
    for rec in snap.scan(&window(src, input)) {
        let bound = Bound {
            rec,
            node: input.node,
            prev: src.attach_prev.then_some(input.prev),
            curr: src.attach_curr.then_some(input.curr),
        };
        let mut row: Row = vec![None; slots];
        row[src.slot] = Some(Arc::new(bound));
        if src.filter.as_ref().is_none_or(|f| eval_bool(f, &sh.env(&row, sh.ctx.params, &[]))) {
            out.push(row);
        }
    }
    out
}

fn scan_partitions(sh: &Shared, src: &Source) -> Vec<Vec<Row>> {
    let all = sh.ctx.inputs;
    let used = inputs_for(src.placement, all);
    let mut parts = pmap(used, sh.ctx.parallel, |input| scan(sh, src, input));
    parts.resize_with(all.len().max(1), Vec::new);
    parts
}

fn merge(a: &Row, b: &Row) -> Row {
    a.iter().zip(b).map(|(x, y)| x.clone().or_else(|| y.clone())).collect()
}

fn build_lookup(sh: &Shared, idx: usize) -> LookupTable {
    let spec = &sh.plan.lookups[idx];
    let mut all = Vec::new();
    for input in inputs_for(spec.placement, sh.ctx.inputs) {
        let Some(snap) = input.snapshots.get(&spec.dataset) else { continue };
        for rec in snap.scan(&ScanWindow::FULL) {
            all.push(Arc::new(Bound { rec, node: input.node, prev: None, curr: None }));
        }
    }
    let keyed = spec.key.as_ref().map(|(inner, outer)| {
        let mut map: HashMap<String, Vec<Arc<Bound>>> = HashMap::new();
        let mut row: Row = vec![None; sh.plan.slots()];
        for b in &all {
            row[spec.slot] = Some(b.clone());
            if let Some(k) = hash_key(&eval(inner, &sh.env(&row, sh.ctx.params, &[])).into_value()) {
                map.entry(k).or_default().push(b.clone());
            }
        }
        (outer.clone(), map)
    });
    if keyed.is_some() {
        all.clear();
    }
    LookupTable { slot: spec.slot, keyed, all, pred: spec.pred.clone(), value: spec.value.clone() }
}

fn key_of(exprs: &[&PExpr], row: &Row, sh: &Shared) -> Option<String> {
    let env = sh.env(row, sh.ctx.params, &[]);
    let mut key = String::new();
    for e in exprs {
        key.push_str(&hash_key(&eval(e, &env).into_value())?);
        key.push('\u{1}');
    }
    Some(key)
}

fn data_join(sh: &Shared, join: &DataJoin, left: Vec<Vec<Row>>, right: Vec<Vec<Row>>, strategy: JoinStrategy) -> Vec<Vec<Row>> {
    let passes = |row: &Row| join.pred.as_ref().is_none_or(|p| eval_bool(p, &sh.env(row, sh.ctx.params, &[])));
    match strategy {
        JoinStrategy::Hash { build } => {
            let buckets = left.len().max(1);
            let lexprs: Vec<&PExpr> = join.equi.iter().map(|(l, _)| l).collect();
            let rexprs: Vec<&PExpr> = join.equi.iter().map(|(_, r)| r).collect();
            let repartition = |parts: Vec<Vec<Row>>, exprs: &[&PExpr]| {
                let keyed: Vec<Vec<(String, Row)>> = pmap(&parts, sh.ctx.parallel, |rows| {
                    rows.iter().filter_map(|r| key_of(exprs, r, sh).map(|k| (k, r.clone()))).collect()
                });
                let mut out: Vec<Vec<(String, Row)>> = vec![Vec::new(); buckets];
                for (k, r) in keyed.into_iter().flatten() {
                    let b = bucket_of(&k, buckets);
                    out[b].push((k, r));
                }
                out
            };
            let l = repartition(left, &lexprs);
            let r = repartition(right, &rexprs);
            let pairs: Vec<(Vec<(String, Row)>, Vec<(String, Row)>)> = l.into_iter().zip(r).collect();
            pmap(&pairs, sh.ctx.parallel, |(lrows, rrows)| {
                let (build_rows, probe_rows) = match build {
                    Side::Left => (lrows, rrows),
                    Side::Right => (rrows, lrows),
                };
                let mut table: HashMap<&str, Vec<&Row>> = HashMap::new();
                for (k, row) in build_rows {
                    table.entry(k.as_str()).or_default().push(row);
                }
                let mut out = Vec::new();
                for (k, row) in probe_rows {
                    for other in table.get(k.as_str()).into_iter().flatten() {
                        let merged = merge(row, other);
                        if passes(&merged) {
                            out.push(merged);
                        }
                    }
                }
                out
            })
        }
        JoinStrategy::BroadcastNestedLoop { broadcast } => {
            let (small, big) = match broadcast {
                Side::Left => (left, right),
                Side::Right => (right, left),
            };
            let small: Vec<Row> = small.into_iter().flatten().collect();
            pmap(&big, sh.ctx.parallel, |rows| {
                let mut out = Vec::new();
                for row in rows {
                    for other in &small {
                        let merged = merge(row, other);
                        if passes(&merged) {
                            out.push(merged);
                        }
                    }
                }
                out
            })
        }
    }
}

fn sub_join(sh: &Shared, parts: Vec<Vec<Row>>) -> Vec<Vec<(Option<usize>, Row)>> {
    let plan = sh.plan;
    let Some(sj) = &plan.sub_join else {
        return parts.into_iter().map(|rows| rows.into_iter().map(|r| (None, r)).collect()).collect();
    };
    let subs = sh.ctx.subs;
    let index: Option<HashMap<String, Vec<usize>>> = (!sj.equi.is_empty()).then(|| {
        let mut m: HashMap<String, Vec<usize>> = HashMap::new();
        'subs: for (i, s) in subs.iter().enumerate() {
            let mut key = String::new();
            for (_, p) in &sj.equi {
                match s.params.get(*p).and_then(hash_key) {
                    Some(k) => key.push_str(&k),
                    None => continue 'subs,
                }
                key.push('\u{1}');
            }
            m.entry(key).or_default().push(i);
        }
        m
    });
    let data_exprs: Vec<&PExpr> = sj.equi.iter().map(|(e, _)| e).collect();
    let all: Vec<usize> = (0..subs.len()).collect();
    pmap(&parts, sh.ctx.parallel, |rows| {
        let mut out = Vec::new();
        for row in rows {
            let candidates: &[usize] = match &index {
                Some(m) => match key_of(&data_exprs, row, sh).and_then(|k| m.get(&k)) {
                    Some(v) => v,
                    None => continue,
                },
                None => &all,
            };
            for &i in candidates {
                if sj.pred.as_ref().is_none_or(|p| eval_bool(p, &sh.env(row, &subs[i].params, &[]))) {
                    out.push((Some(i), row.clone()));
                }
            }
        }
        out
    })
}

fn project(sh: &Shared, row: &Row, params: &[Value], aggs: &[i64]) -> (Value, Vec<Value>) {
    let env = sh.env(row, params, aggs);
    let value = match &sh.plan.output {
        Output::Value(e) => eval(e, &env).into_value(),
        Output::Items(items) => {
            let mut o = crate::value::Object::new();
            for (name, e) in items {
                o.insert(name.clone(), eval(e, &env).into_value());
            }
            Value::Object(o)
        }
    };
    let keys = sh.plan.order_by.iter().map(|(e, _)| eval(e, &env).into_value()).collect();
    (value, keys)
}

fn cmp_keys(a: &[Value], b: &[Value], order: &[(PExpr, bool)]) -> Ordering {
    for ((x, y), (_, desc)) in a.iter().zip(b).zip(order) {
        let o = match (x, y) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Null, _) => Ordering::Less,
            (_, Value::Null) => Ordering::Greater,
            _ => compare_values(x, y).unwrap_or_else(|| x.type_name().cmp(y.type_name())),
        };
        let o = if *desc { o.reverse() } else { o };
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

/// Runs a compiled plan over per-node inputs.
pub fn execute(plan: &CompiledQuery, ctx: &ExecContext) -> ExecOutput {
    let times = if plan.channel {
        Times::Attached
    } else {
        Times::Constant { prev: ActiveTimestamp::new(0, 0), curr: ActiveTimestamp::ceiling(ctx.now) }
    };
    let mut sh = Shared { plan, ctx, times, lookups: Vec::new() };
    let started = Instant::now();
    sh.lookups = (0..plan.lookups.len()).map(|i| build_lookup(&sh, i)).collect();
    let mut scans: Vec<Vec<Vec<Row>>> = plan.sources.iter().map(|s| scan_partitions(&sh, s)).collect();
    let scanned = scans.iter().flatten().map(|p| p.len()).sum();
    let load_new_data = started.elapsed();

    let started = Instant::now();
    let mut strategy = None;
    let joined = match &plan.join {
        Some(join) => {
            let estimate = |src: &Source| -> usize {
                inputs_for(src.placement, ctx.inputs)
                    .iter()
                    .map(|i| i.snapshots.get(&src.dataset).map_or(0, |s| s.estimate(&window(src, i))))
                    .sum()
            };
            let s = choose_join_strategy(join, estimate(&plan.sources[0]), estimate(&plan.sources[1]));
            strategy = Some(s);
            let right = scans.pop().unwrap();
            let left = scans.pop().unwrap();
            data_join(&sh, join, left, right, s)
        }
        None => scans.pop().unwrap(),
    };
    let matched = sub_join(&sh, joined);
    let filtered: Vec<(Option<usize>, Row)> = matched
        .into_iter()
        .flatten()
        .filter(|(sub, row)| plan.post_filter.as_ref().is_none_or(|f| eval_bool(f, &sh.env(row, sh.params_for(*sub), &[]))))
        .collect();

    let mut results: Vec<(Option<usize>, Value, Vec<Value>)> = match &plan.aggregation {
        None => filtered
            .iter()
            .map(|(sub, row)| {
                let (v, k) = project(&sh, row, sh.params_for(*sub), &[]);
                (*sub, v, k)
            })
            .collect(),
        Some(agg) => {
            let mut groups: IndexMap<(Option<usize>, String), (Row, Vec<i64>)> = IndexMap::new();
            for (sub, row) in &filtered {
                let env = sh.env(row, sh.params_for(*sub), &[]);
                let gkey = agg.group.as_ref().map(|g| eval(g, &env).into_value().to_json_string()).unwrap_or_default();
                let entry = groups.entry((*sub, gkey)).or_insert_with(|| (row.clone(), vec![0; agg.counts.len()]));
                for (i, c) in agg.counts.iter().enumerate() {
                    let counted = match c {
                        None => true,
                        Some(e) => eval(e, &env).into_value() != Value::Null,
                    };
                    entry.1[i] += counted as i64;
                }
            }
            if groups.is_empty() && !plan.channel && agg.group.is_none() {
                groups.insert((None, String::new()), (vec![None; plan.slots()], vec![0; agg.counts.len()]));
            }
            groups
                .into_iter()
                .map(|((sub, _), (row, counts))| {
                    let (v, k) = project(&sh, &row, sh.params_for(sub), &counts);
                    (sub, v, k)
                })
                .collect()
        }
    };
    if !plan.order_by.is_empty() {
        results.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| cmp_keys(&a.2, &b.2, &plan.order_by)));
    }
    if let Some(limit) = plan.limit {
        let mut seen: HashMap<Option<usize>, u64> = HashMap::new();
        results.retain(|(sub, _, _)| {
            let n = seen.entry(*sub).or_insert(0);
            *n += 1;
            *n <= limit
        });
    }
    let join_time = started.elapsed();
    ExecOutput {
        rows: results.into_iter().map(|(sub, value, _)| ResultRow { sub, value }).collect(),
        strategy,
        scanned,
        load_new_data,
        join: join_time,
    }
}
