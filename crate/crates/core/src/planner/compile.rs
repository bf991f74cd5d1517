use std::sync::Arc;

use crate::cluster::Placement;
use crate::dsl::{BinaryOp, Expr, Literal, Query, Select, UnaryOp};
use crate::error::{EngineError, ErrorKind, Result};
use crate::storage::DatasetDescriptor;
use crate::value::Value;

use super::expr::{Builtin, PExpr, TimeFn};
use super::{Aggregation, CompiledQuery, DataJoin, LookupSpec, Output, Source, SubJoin, TimeBound};

/// Read access to dataset definitions during compilation.
pub trait Catalog {
    fn dataset(&self, name: &str) -> Option<(Arc<DatasetDescriptor>, Placement)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    /// Parameters are bound per subscription and channel times come from
    /// each node's clock. Otherwise parameters are constants of one call and
    /// the query runs as a one-shot (ad-hoc) query.
    pub channel: bool,
    pub optimize: bool,
}

impl CompileOptions {
    pub const CHANNEL: CompileOptions = CompileOptions { channel: true, optimize: true };
    pub const ADHOC: CompileOptions = CompileOptions { channel: false, optimize: true };
}

struct Slot {
    alias: String,
    dataset: String,
    placement: Placement,
    active: bool,
}

struct Compiler<'a> {
    catalog: &'a dyn Catalog,
    params: &'a [String],
    slots: Vec<Slot>,
    lookups: Vec<LookupSpec>,
    counts: Vec<Option<PExpr>>,
    /// Visible slot lists, innermost last.
    scopes: Vec<Vec<usize>>,
    in_lookup: bool,
}

pub fn compile(q: &Query, params: &[String], catalog: &dyn Catalog, opts: CompileOptions) -> Result<CompiledQuery> {
    let mut c = Compiler { catalog, params, slots: Vec::new(), lookups: Vec::new(), counts: Vec::new(), scopes: Vec::new(), in_lookup: false };
    if q.from.is_empty() {
        return Err(EngineError::compile("a query needs at least one FROM source"));
    }
    if q.from.len() > 2 {
        return Err(EngineError::compile("at most two FROM sources are supported"));
    }
    let mut top = Vec::new();
    for f in &q.from {
        if c.slots.iter().any(|s| s.alias == f.alias) {
            return Err(EngineError::compile(format!("duplicate alias `{}`", f.alias)));
        }
        top.push(c.add_slot(&f.dataset, &f.alias)?);
    }
    c.scopes.push(top.clone());

    let pred = q.where_clause.as_ref().map(|w| c.expr(w, false)).transpose()?;
    let output = match &q.select {
        Select::Value(e) => Output::Value(c.expr(e, true)?),
        Select::Items(items) => {
            let mut out = Vec::new();
            for (i, item) in items.iter().enumerate() {
                let name = match (&item.alias, &item.expr) {
                    (Some(a), _) => a.clone(),
                    (None, Expr::Ident(n)) => n.clone(),
                    (None, Expr::Field(_, f)) => f.clone(),
                    (None, Expr::Call { name, args }) if name.eq_ignore_ascii_case("count") && args.len() == 1 => "count".into(),
                    (None, _) => format!("${}", i + 1),
                };
                out.push((name, c.expr(&item.expr, true)?));
            }
            Output::Items(out)
        }
    };
    let group = q.group_by.as_ref().map(|g| c.expr(g, false)).transpose()?;
    let mut order_by = Vec::new();
    for o in &q.order_by {
        order_by.push((c.expr(&o.expr, true)?, o.desc));
    }
    let aggregation = if group.is_some() || !c.counts.is_empty() {
        Some(Aggregation { group, counts: std::mem::take(&mut c.counts) })
    } else {
        None
    };

    let mut sources: Vec<Source> = top
        .iter()
        .map(|&s| {
            let slot = &c.slots[s];
            Source {
                slot: s,
                alias: slot.alias.clone(),
                dataset: slot.dataset.clone(),
                placement: slot.placement,
                active: slot.active,
                lower: None,
                upper: None,
                attach_prev: false,
                attach_curr: false,
                filter: None,
            }
        })
        .collect();

    let optimized = opts.optimize;
    let mut pred = pred.unwrap_or_else(PExpr::truth);
    if optimized && opts.channel {
        for src in sources.iter_mut().filter(|s| s.active) {
            // Rule 1: every active scan is capped at the current channel time.
            src.upper = Some(TimeBound::Curr);
            let below_curr = time_atom(TimeFn::ActiveTimestamp, TimeFn::Current, src.slot);
            pred = replace_atom(pred, &below_curr);
            // Rule 2: a previous-time lower bound implied by the whole predicate.
            let above_prev = time_atom(TimeFn::Previous, TimeFn::ActiveTimestamp, src.slot);
            if implies_atom(&pred, &above_prev) {
                src.lower = Some(TimeBound::Prev);
                pred = replace_atom(pred, &above_prev);
            }
        }
        pred = pred.simplify();
    }

    let mut join = if sources.len() == 2 { Some(DataJoin { equi: Vec::new(), pred: None }) } else { None };
    let mut sub_join = opts.channel.then(|| SubJoin { equi: Vec::new(), pred: None });
    let mut post = Vec::new();
    if optimized {
        let mut join_preds = Vec::new();
        let mut sub_preds = Vec::new();
        let mut filters: Vec<Vec<PExpr>> = vec![Vec::new(); sources.len()];
        for conj in pred.conjuncts() {
            if conj.is_true_const() {
                continue;
            }
            let mut slots = Vec::new();
            conj.slots(&mut slots);
            if conj.uses_lookup() {
                post.push(conj);
            } else if conj.uses_params() && sub_join.is_some() {
                match param_equi(&conj) {
                    Some(pair) if !sub_join.as_ref().unwrap().equi.iter().any(|(_, p)| *p == pair.1) => {
                        sub_join.as_mut().unwrap().equi.push(pair)
                    }
                    _ => sub_preds.push(conj),
                }
            } else if slots.len() <= 1 {
                let target = slots.first().map_or(0, |s| sources.iter().position(|src| src.slot == *s).unwrap());
                filters[target].push(conj);
            } else {
                match data_equi(&conj, sources[0].slot, sources[1].slot) {
                    Some(pair) => join.as_mut().unwrap().equi.push(pair),
                    None => join_preds.push(conj),
                }
            }
        }
        for (src, f) in sources.iter_mut().zip(filters) {
            src.filter = PExpr::and_all(f);
        }
        if let Some(j) = join.as_mut() {
            j.pred = PExpr::and_all(join_preds);
        }
        if let Some(s) = sub_join.as_mut() {
            s.pred = PExpr::and_all(sub_preds);
        }
    } else if !pred.is_true_const() {
        post.push(pred);
    }
    let post_filter = PExpr::and_all(post);

    let mut plan = CompiledQuery {
        sources,
        join,
        sub_join,
        post_filter,
        output,
        aggregation,
        order_by,
        limit: q.limit,
        lookups: c.lookups,
        aliases: c.slots.iter().map(|s| s.alias.clone()).collect(),
        param_names: params.to_vec(),
        channel: opts.channel,
        optimized,
    };
    let (prev, curr) = (plan.mentions(TimeFn::Previous), plan.mentions(TimeFn::Current));
    for src in plan.sources.iter_mut() {
        src.attach_prev = prev.contains(&src.slot);
        src.attach_curr = curr.contains(&src.slot);
    }
    Ok(plan)
}

/// `lhs(s) < rhs(s)`.
fn time_atom(lhs: TimeFn, rhs: TimeFn, slot: usize) -> PExpr {
    PExpr::binary(BinaryOp::Lt, PExpr::Time(lhs, slot), PExpr::Time(rhs, slot))
}

fn is_atom(e: &PExpr, atom: &PExpr) -> bool {
    if e == atom {
        return true;
    }
    match (e, atom) {
        (PExpr::Binary(BinaryOp::Gt, l, r), PExpr::Binary(BinaryOp::Lt, al, ar)) => l == ar && r == al,
        _ => false,
    }
}

/// True when every disjunct of the predicate's DNF contains `atom`, so the
/// predicate can only hold where the atom holds.
fn implies_atom(e: &PExpr, atom: &PExpr) -> bool {
    match e {
        PExpr::Binary(BinaryOp::And, l, r) => implies_atom(l, atom) || implies_atom(r, atom),
        PExpr::Binary(BinaryOp::Or, l, r) => implies_atom(l, atom) && implies_atom(r, atom),
        other => is_atom(other, atom),
    }
}

/// Replaces occurrences of `atom` reachable through AND/OR with TRUE.
fn replace_atom(e: PExpr, atom: &PExpr) -> PExpr {
    match e {
        PExpr::Binary(op @ (BinaryOp::And | BinaryOp::Or), l, r) => {
            PExpr::binary(op, replace_atom(*l, atom), replace_atom(*r, atom))
        }
        other if is_atom(&other, atom) => PExpr::truth(),
        other => other,
    }
}

/// `expr = param` with a parameter-free expression on the other side.
fn param_equi(e: &PExpr) -> Option<(PExpr, usize)> {
    let PExpr::Binary(BinaryOp::Eq, l, r) = e else { return None };
    match (&**l, &**r) {
        (x, PExpr::Param(i)) | (PExpr::Param(i), x) if !x.uses_params() => Some((x.clone(), *i)),
        _ => None,
    }
}

/// `f(left) = g(right)` in either orientation, returned as (left, right).
fn data_equi(e: &PExpr, left: usize, right: usize) -> Option<(PExpr, PExpr)> {
    let PExpr::Binary(BinaryOp::Eq, l, r) = e else { return None };
    let only = |x: &PExpr, s: usize| {
        let mut v = Vec::new();
        x.slots(&mut v);
        v == [s]
    };
    if only(l, left) && only(r, right) {
        Some(((**l).clone(), (**r).clone()))
    } else if only(l, right) && only(r, left) {
        Some(((**r).clone(), (**l).clone()))
    } else {
        None
    }
}

impl Compiler<'_> {
    fn add_slot(&mut self, dataset: &str, alias: &str) -> Result<usize> {
        let (desc, placement) = self.catalog.dataset(dataset).ok_or_else(|| EngineError::dataset_not_found(dataset))?;
        self.slots.push(Slot { alias: alias.to_string(), dataset: desc.name.clone(), placement, active: desc.is_active });
        Ok(self.slots.len() - 1)
    }

    fn resolve_alias(&self, name: &str) -> Option<usize> {
        self.scopes.iter().rev().flat_map(|s| s.iter()).copied().find(|&s| self.slots[s].alias == name)
    }

    /// Slot of an active function's argument.
    fn active_arg(&self, fname: &str, args: &[Expr]) -> Result<usize> {
        let [Expr::Ident(name)] = args else {
            return Err(EngineError::compile(format!("{fname} takes one dataset alias")));
        };
        let slot = self
            .resolve_alias(name)
            .ok_or_else(|| EngineError::compile(format!("{fname} argument `{name}` is not a FROM alias")))?;
        if !self.slots[slot].active {
            return Err(EngineError::new(
                ErrorKind::ActiveFunctionOnPlainDataset,
                format!("{fname}({name}) used on plain dataset `{}`", self.slots[slot].dataset),
            ));
        }
        Ok(slot)
    }

    fn expr(&mut self, e: &Expr, agg_ok: bool) -> Result<PExpr> {
        Ok(match e {
            Expr::Literal(l) => PExpr::Const(match l {
                Literal::Null => Value::Null,
                Literal::Bool(b) => Value::Bool(*b),
                Literal::Int(i) => Value::Int(*i),
                Literal::Float(f) => Value::Float(*f),
                Literal::Str(s) => Value::String(s.clone()),
            }),
            Expr::Ident(name) => {
                if let Some(s) = self.resolve_alias(name) {
                    PExpr::Var(s)
                } else if let Some(i) = self.params.iter().position(|p| p == name) {
                    PExpr::Param(i)
                } else {
                    return Err(EngineError::compile(format!("unknown identifier `{name}`")));
                }
            }
            Expr::Field(base, f) => match self.expr(base, agg_ok)? {
                PExpr::Var(s) => PExpr::Path(s, vec![f.clone()]),
                PExpr::Path(s, mut p) => {
                    p.push(f.clone());
                    PExpr::Path(s, p)
                }
                other => PExpr::Field(Box::new(other), f.clone()),
            },
            Expr::Star => return Err(EngineError::compile("`*` is only allowed inside count")),
            Expr::Call { name, args } => self.call(&name.to_ascii_lowercase(), args, agg_ok)?,
            Expr::Unary { op, expr } => {
                let inner = self.expr(expr, agg_ok)?;
                match op {
                    UnaryOp::Not => PExpr::Not(Box::new(inner)),
                    UnaryOp::Neg => PExpr::Neg(Box::new(inner)),
                }
            }
            Expr::Binary { op, lhs, rhs } => PExpr::binary(*op, self.expr(lhs, agg_ok)?, self.expr(rhs, agg_ok)?),
            Expr::Object(fields) => {
                let mut out = Vec::new();
                for (k, v) in fields {
                    out.push((k.clone(), self.expr(v, agg_ok)?));
                }
                PExpr::Object(out)
            }
            Expr::Array(items) => PExpr::Array(items.iter().map(|i| self.expr(i, agg_ok)).collect::<Result<_>>()?),
            Expr::Subquery(q) => self.lookup(q)?,
        })
    }

    fn call(&mut self, name: &str, args: &[Expr], agg_ok: bool) -> Result<PExpr> {
        match name {
            "is_new" => {
                let s = self.active_arg(name, args)?;
                return Ok(PExpr::binary(
                    BinaryOp::And,
                    time_atom(TimeFn::Previous, TimeFn::ActiveTimestamp, s),
                    time_atom(TimeFn::ActiveTimestamp, TimeFn::Current, s),
                ));
            }
            "active_timestamp" | "previous_channel_time" | "current_channel_time" => {
                let s = self.active_arg(name, args)?;
                let f = match name {
                    "active_timestamp" => TimeFn::ActiveTimestamp,
                    "previous_channel_time" => TimeFn::Previous,
                    _ => TimeFn::Current,
                };
                return Ok(PExpr::Time(f, s));
            }
            "current_datetime" => {
                if !args.is_empty() {
                    return Err(EngineError::compile("current_datetime takes no arguments"));
                }
                return Ok(PExpr::Now);
            }
            "count" => {
                if !agg_ok || self.in_lookup {
                    return Err(EngineError::compile("count is only allowed in SELECT and ORDER BY"));
                }
                let arg = match args {
                    [Expr::Star] => None,
                    [e] => Some(self.expr(e, false)?),
                    _ => return Err(EngineError::compile("count takes one argument")),
                };
                self.counts.push(arg);
                return Ok(PExpr::Agg(self.counts.len() - 1));
            }
            _ => {}
        }
        let (b, arity) = Builtin::lookup(name).ok_or_else(|| EngineError::compile(format!("unknown function `{name}`")))?;
        if args.len() != arity {
            return Err(EngineError::compile(format!("{name} takes {arity} argument(s), got {}", args.len())));
        }
        let args: Vec<PExpr> = args.iter().map(|a| self.expr(a, agg_ok)).collect::<Result<_>>()?;
        // Constant calls are folded so literal durations and datetimes print and compare cheaply.
        if args.iter().all(|a| matches!(a, PExpr::Const(_))) {
            let cross = std::sync::atomic::AtomicU64::new(0);
            let env = super::expr::Env {
                row: &[],
                extra: None,
                params: &[],
                now: 0,
                times: super::expr::Times::Attached,
                aggs: &[],
                lookups: &[],
                cross: &cross,
            };
            let v = super::expr::eval(&PExpr::Call(b, args.clone()), &env).into_value();
            if v == Value::Null {
                return Err(EngineError::compile(format!("invalid constant arguments to {name}")));
            }
            return Ok(PExpr::Const(v));
        }
        Ok(PExpr::Call(b, args))
    }

    fn lookup(&mut self, q: &Query) -> Result<PExpr> {
        if self.in_lookup {
            return Err(EngineError::compile("nested subqueries are not supported"));
        }
        if q.from.len() != 1 || q.group_by.is_some() || !q.order_by.is_empty() || q.limit.is_some() {
            return Err(EngineError::compile("subqueries take one source and no GROUP BY, ORDER BY or LIMIT"));
        }
        let slot = self.add_slot(&q.from[0].dataset, &q.from[0].alias)?;
        self.scopes.push(vec![slot]);
        self.in_lookup = true;
        let result = (|| -> Result<LookupSpec> {
            let value = match &q.select {
                Select::Value(e) => self.expr(e, false)?,
                Select::Items(items) => {
                    let mut fields = Vec::new();
                    for (i, item) in items.iter().enumerate() {
                        let name = match (&item.alias, &item.expr) {
                            (Some(a), _) => a.clone(),
                            (None, Expr::Ident(n)) => n.clone(),
                            (None, Expr::Field(_, f)) => f.clone(),
                            (None, _) => format!("${}", i + 1),
                        };
                        fields.push((name, self.expr(&item.expr, false)?));
                    }
                    PExpr::Object(fields)
                }
            };
            let mut key = None;
            let mut rest = Vec::new();
            if let Some(w) = &q.where_clause {
                for conj in self.expr(w, false)?.conjuncts() {
                    if key.is_none() {
                        if let Some(k) = lookup_equi(&conj, slot) {
                            key = Some(k);
                            continue;
                        }
                    }
                    rest.push(conj);
                }
            }
            Ok(LookupSpec {
                slot,
                alias: q.from[0].alias.clone(),
                dataset: self.slots[slot].dataset.clone(),
                placement: self.slots[slot].placement,
                key,
                pred: PExpr::and_all(rest),
                value,
            })
        })();
        self.in_lookup = false;
        self.scopes.pop();
        self.lookups.push(result?);
        Ok(PExpr::Lookup(self.lookups.len() - 1))
    }
}

/// `inner(slot) = outer(...)`, returned as (inner, outer).
fn lookup_equi(e: &PExpr, slot: usize) -> Option<(PExpr, PExpr)> {
    let PExpr::Binary(BinaryOp::Eq, l, r) = e else { return None };
    let slots_of = |x: &PExpr| {
        let mut v = Vec::new();
        x.slots(&mut v);
        v
    };
    let (ls, rs) = (slots_of(l), slots_of(r));
    if ls == [slot] && !rs.contains(&slot) {
        Some(((**l).clone(), (**r).clone()))
    } else if rs == [slot] && !ls.contains(&slot) {
        Some(((**r).clone(), (**l).clone()))
    } else {
        None
    }
}

/// Compiles an expression outside any query: identifiers resolve to
/// `params` only and subqueries are rejected.
pub fn compile_expr(e: &Expr, params: &[String], catalog: &dyn Catalog) -> Result<PExpr> {
    let mut c = Compiler { catalog, params, slots: Vec::new(), lookups: Vec::new(), counts: Vec::new(), scopes: vec![Vec::new()], in_lookup: false };
    let out = c.expr(e, false)?;
    if !c.lookups.is_empty() {
        return Err(EngineError::compile("subqueries are not allowed here"));
    }
    Ok(out)
}
