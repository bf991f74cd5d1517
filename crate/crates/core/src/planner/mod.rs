//! Query compilation, channel-aware rewrites and distributed execution.

mod compile;
mod exec;
mod explain;
pub mod expr;

use crate::cluster::Placement;

pub use compile::{compile, compile_expr, Catalog, CompileOptions};
pub use exec::{choose_join_strategy, execute, load_subscriptions, ExecContext, ExecOutput, JoinStrategy, ResultRow, Side, SubRow};
pub use explain::{explain, ExplainHeader};
pub use expr::{eval_standalone, PExpr, TimeFn};

/// Which channel time bounds a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeBound {
    Prev,
    Curr,
}

#[derive(Debug, Clone)]
pub struct Source {
    pub slot: usize,
    pub alias: String,
    pub dataset: String,
    pub placement: Placement,
    pub active: bool,
    /// Exclusive lower bound on the active timestamp.
    pub lower: Option<TimeBound>,
    /// Exclusive upper bound on the active timestamp.
    pub upper: Option<TimeBound>,
    pub attach_prev: bool,
    pub attach_curr: bool,
    pub filter: Option<PExpr>,
}

/// Join between the two FROM sources. No equi keys means a nested loop.
#[derive(Debug, Clone)]
pub struct DataJoin {
    pub equi: Vec<(PExpr, PExpr)>,
    pub pred: Option<PExpr>,
}

/// Join of data rows against the channel's subscriptions.
#[derive(Debug, Clone)]
pub struct SubJoin {
    /// Data expression equal to a subscription parameter.
    pub equi: Vec<(PExpr, usize)>,
    pub pred: Option<PExpr>,
}

#[derive(Debug, Clone)]
pub enum Output {
    Items(Vec<(String, PExpr)>),
    Value(PExpr),
}

#[derive(Debug, Clone)]
pub struct Aggregation {
    pub group: Option<PExpr>,
    /// `count(*)` is `None`.
    pub counts: Vec<Option<PExpr>>,
}

/// A correlated subquery materialized per execution and probed per row.
#[derive(Debug, Clone)]
pub struct LookupSpec {
    pub slot: usize,
    pub alias: String,
    pub dataset: String,
    pub placement: Placement,
    /// (inner key, outer key) when the subquery is an equi-lookup.
    pub key: Option<(PExpr, PExpr)>,
    pub pred: Option<PExpr>,
    pub value: PExpr,
}

#[derive(Debug, Clone)]
pub struct CompiledQuery {
    pub sources: Vec<Source>,
    pub join: Option<DataJoin>,
    pub sub_join: Option<SubJoin>,
    /// Evaluated after the subscription join.
    pub post_filter: Option<PExpr>,
    pub output: Output,
    pub aggregation: Option<Aggregation>,
    pub order_by: Vec<(PExpr, bool)>,
    pub limit: Option<u64>,
    pub lookups: Vec<LookupSpec>,
    /// Alias per slot.
    pub aliases: Vec<String>,
    pub param_names: Vec<String>,
    pub channel: bool,
    pub optimized: bool,
}

impl CompiledQuery {
    pub fn slots(&self) -> usize {
        self.aliases.len()
    }

    /// Every expression of the plan, for analysis.
    pub fn exprs(&self) -> Vec<&PExpr> {
        let mut v: Vec<&PExpr> = Vec::new();
        for s in &self.sources {
            v.extend(s.filter.iter());
        }
        if let Some(j) = &self.join {
            for (l, r) in &j.equi {
                v.push(l);
                v.push(r);
            }
            v.extend(j.pred.iter());
        }
        if let Some(s) = &self.sub_join {
            v.extend(s.equi.iter().map(|(e, _)| e));
            v.extend(s.pred.iter());
        }
        v.extend(self.post_filter.iter());
        match &self.output {
            Output::Items(items) => v.extend(items.iter().map(|(_, e)| e)),
            Output::Value(e) => v.push(e),
        }
        if let Some(a) = &self.aggregation {
            v.extend(a.group.iter());
            v.extend(a.counts.iter().flatten());
        }
        v.extend(self.order_by.iter().map(|(e, _)| e));
        for l in &self.lookups {
            if let Some((i, o)) = &l.key {
                v.push(i);
                v.push(o);
            }
            v.extend(l.pred.iter());
            v.push(&l.value);
        }
        v
    }

    /// Slots whose channel time `f` is read anywhere in the plan.
    pub fn mentions(&self, f: TimeFn) -> Vec<usize> {
        let mut out = Vec::new();
        for e in self.exprs() {
            collect_time(e, f, &mut out);
        }
        out
    }

    /// Datasets read by the plan, sources first.
    pub fn datasets(&self) -> Vec<(String, Placement)> {
        let mut out: Vec<(String, Placement)> = Vec::new();
        let all = self.sources.iter().map(|s| (&s.dataset, s.placement)).chain(self.lookups.iter().map(|l| (&l.dataset, l.placement)));
        for (d, p) in all {
            if !out.iter().any(|(x, _)| x == d) {
                out.push((d.clone(), p));
            }
        }
        out
    }
}

fn collect_time(e: &PExpr, f: TimeFn, out: &mut Vec<usize>) {
    if let PExpr::Time(g, s) = e {
        if *g == f && !out.contains(s) {
            out.push(*s);
        }
    }
    for c in e.children() {
        collect_time(c, f, out);
    }
}
