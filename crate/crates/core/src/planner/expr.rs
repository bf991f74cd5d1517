//! Resolved expressions and their evaluator.
//!
//! Identifiers are resolved to record slots and parameter indexes at compile
//! time. Evaluation is three-valued: `Null` stands for unknown, and a WHERE
//! clause keeps a row only when its predicate is exactly `true`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use crate::dsl::BinaryOp;
use crate::storage::ActiveRecord;
use crate::time::ActiveTimestamp;
use crate::value::{compare_values, spatial_distance, Object, Point, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimeFn {
    ActiveTimestamp,
    Previous,
    Current,
}

impl TimeFn {
    pub fn name(self) -> &'static str {
        match self {
            TimeFn::ActiveTimestamp => "active_timestamp",
            TimeFn::Previous => "previous_channel_time",
            TimeFn::Current => "current_channel_time",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    SpatialDistance,
    Datetime,
    Duration,
    ObjectMerge,
    Point,
}

impl Builtin {
    pub fn lookup(name: &str) -> Option<(Builtin, usize)> {
        Some(match name {
            "spatial_distance" => (Builtin::SpatialDistance, 2),
            "datetime" => (Builtin::Datetime, 1),
            "duration" | "day_time_duration" => (Builtin::Duration, 1),
            "object_merge" => (Builtin::ObjectMerge, 2),
            "point" | "create_point" => (Builtin::Point, 2),
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::SpatialDistance => "spatial_distance",
            Builtin::Datetime => "datetime",
            Builtin::Duration => "duration",
            Builtin::ObjectMerge => "object_merge",
            Builtin::Point => "point",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PExpr {
    Const(Value),
    Param(usize),
    /// A whole record bound to a slot.
    Var(usize),
    /// Field path inside a slot's document.
    Path(usize, Vec<String>),
    Field(Box<PExpr>, String),
    Time(TimeFn, usize),
    /// `current_datetime()`: one value per execution.
    Now,
    Call(Builtin, Vec<PExpr>),
    Not(Box<PExpr>),
    Neg(Box<PExpr>),
    Binary(BinaryOp, Box<PExpr>, Box<PExpr>),
    Object(Vec<(String, PExpr)>),
    Array(Vec<PExpr>),
    /// Aggregate result by index (`count`).
    Agg(usize),
    /// Correlated lookup subquery by index.
    Lookup(usize),
}

impl PExpr {
    pub fn binary(op: BinaryOp, l: PExpr, r: PExpr) -> PExpr {
        PExpr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn truth() -> PExpr {
        PExpr::Const(Value::Bool(true))
    }

    pub fn is_true_const(&self) -> bool {
        matches!(self, PExpr::Const(Value::Bool(true)))
    }

    pub fn children(&self) -> Vec<&PExpr> {
        match self {
            PExpr::Field(b, _) | PExpr::Not(b) | PExpr::Neg(b) => vec![b],
            PExpr::Call(_, args) | PExpr::Array(args) => args.iter().collect(),
            PExpr::Binary(_, l, r) => vec![l, r],
            PExpr::Object(fields) => fields.iter().map(|(_, v)| v).collect(),
            _ => vec![],
        }
    }

    pub fn any(&self, f: &dyn Fn(&PExpr) -> bool) -> bool {
        f(self) || self.children().into_iter().any(|c| c.any(f))
    }

    /// Slots referenced directly (lookups are reported separately).
    pub fn slots(&self, out: &mut Vec<usize>) {
        match self {
            PExpr::Var(s) | PExpr::Path(s, _) | PExpr::Time(_, s) => {
                if !out.contains(s) {
                    out.push(*s)
                }
            }
            _ => {}
        }
        for c in self.children() {
            c.slots(out);
        }
    }

    pub fn uses_params(&self) -> bool {
        self.any(&|e| matches!(e, PExpr::Param(_)))
    }

    pub fn uses_lookup(&self) -> bool {
        self.any(&|e| matches!(e, PExpr::Lookup(_)))
    }

    /// Splits a chain of ANDs.
    pub fn conjuncts(self) -> Vec<PExpr> {
        match self {
            PExpr::Binary(BinaryOp::And, l, r) => {
                let mut v = l.conjuncts();
                v.extend(r.conjuncts());
                v
            }
            other => vec![other],
        }
    }

    pub fn and_all(mut parts: Vec<PExpr>) -> Option<PExpr> {
        parts.retain(|p| !p.is_true_const());
        let mut it = parts.into_iter();
        let first = it.next()?;
        Some(it.fold(first, |acc, p| PExpr::binary(BinaryOp::And, acc, p)))
    }

    /// Rewrites bottom-up.
    pub fn rewrite(self, f: &dyn Fn(PExpr) -> PExpr) -> PExpr {
        let e = match self {
            PExpr::Field(b, n) => PExpr::Field(Box::new(b.rewrite(f)), n),
            PExpr::Not(b) => PExpr::Not(Box::new(b.rewrite(f))),
            PExpr::Neg(b) => PExpr::Neg(Box::new(b.rewrite(f))),
            PExpr::Call(b, args) => PExpr::Call(b, args.into_iter().map(|a| a.rewrite(f)).collect()),
            PExpr::Array(items) => PExpr::Array(items.into_iter().map(|a| a.rewrite(f)).collect()),
            PExpr::Binary(op, l, r) => PExpr::Binary(op, Box::new(l.rewrite(f)), Box::new(r.rewrite(f))),
            PExpr::Object(fields) => PExpr::Object(fields.into_iter().map(|(k, v)| (k, v.rewrite(f))).collect()),
            other => other,
        };
        f(e)
    }

    /// Folds `TRUE AND x`, `TRUE OR x`, `NOT TRUE` and friends.
    pub fn simplify(self) -> PExpr {
        self.rewrite(&|e| match e {
            PExpr::Binary(BinaryOp::And, l, r) => match (*l, *r) {
                (PExpr::Const(Value::Bool(true)), x) | (x, PExpr::Const(Value::Bool(true))) => x,
                (PExpr::Const(Value::Bool(false)), _) | (_, PExpr::Const(Value::Bool(false))) => {
                    PExpr::Const(Value::Bool(false))
                }
                (l, r) => PExpr::binary(BinaryOp::And, l, r),
            },
            PExpr::Binary(BinaryOp::Or, l, r) => match (*l, *r) {
                (PExpr::Const(Value::Bool(true)), _) | (_, PExpr::Const(Value::Bool(true))) => PExpr::truth(),
                (PExpr::Const(Value::Bool(false)), x) | (x, PExpr::Const(Value::Bool(false))) => x,
                (l, r) => PExpr::binary(BinaryOp::Or, l, r),
            },
            PExpr::Not(inner) => match *inner {
                PExpr::Const(Value::Bool(b)) => PExpr::Const(Value::Bool(!b)),
                x => PExpr::Not(Box::new(x)),
            },
            other => other,
        })
    }
}

/// A record bound into a row, with the channel times attached by its scan.
#[derive(Debug, Clone)]
pub struct Bound {
    pub rec: ActiveRecord,
    pub node: usize,
    pub prev: Option<ActiveTimestamp>,
    pub curr: Option<ActiveTimestamp>,
}

pub type Row = Vec<Option<Arc<Bound>>>;

/// Result of evaluating an expression. Active timestamps keep the node whose
/// clock produced them so cross-node comparisons can be audited.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalValue {
    V(Value),
    Ts { ts: ActiveTimestamp, origin: Option<usize> },
}

impl EvalValue {
    pub const NULL: EvalValue = EvalValue::V(Value::Null);

    pub fn into_value(self) -> Value {
        match self {
            EvalValue::V(v) => v,
            EvalValue::Ts { ts, .. } => Value::Datetime(ts.micros),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            EvalValue::V(Value::Bool(b)) => Some(*b),
            _ => None,
        }
    }

    fn is_null(&self) -> bool {
        matches!(self, EvalValue::V(Value::Null))
    }
}

/// How `previous_channel_time` / `current_channel_time` are answered.
#[derive(Debug, Clone, Copy)]
pub enum Times {
    /// Read from the times attached to each bound record.
    Attached,
    /// Constants for every record (ad-hoc queries).
    Constant { prev: ActiveTimestamp, curr: ActiveTimestamp },
}

/// A materialized lookup subquery, probed per outer row.
#[derive(Debug)]
pub struct LookupTable {
    pub slot: usize,
    pub keyed: Option<(PExpr, HashMap<String, Vec<Arc<Bound>>>)>,
    pub all: Vec<Arc<Bound>>,
    pub pred: Option<PExpr>,
    pub value: PExpr,
}

pub struct Env<'a> {
    pub row: &'a [Option<Arc<Bound>>],
    pub extra: Option<(usize, &'a Arc<Bound>)>,
    pub params: &'a [Value],
    pub now: i64,
    pub times: Times,
    pub aggs: &'a [i64],
    pub lookups: &'a [LookupTable],
    pub cross: &'a AtomicU64,
}

impl<'a> Env<'a> {
    fn slot(&self, slot: usize) -> Option<&Arc<Bound>> {
        if let Some((s, b)) = self.extra {
            if s == slot {
                return Some(b);
            }
        }
        self.row.get(slot).and_then(|b| b.as_ref())
    }

    fn with_extra<'b>(&'b self, slot: usize, bound: &'b Arc<Bound>) -> Env<'b> {
        Env {
            row: self.row,
            extra: Some((slot, bound)),
            params: self.params,
            now: self.now,
            times: self.times,
            aggs: self.aggs,
            lookups: self.lookups,
            cross: self.cross,
        }
    }
}

/// Canonical hash-join key. Numbers that compare equal share a key; null
/// never matches anything.
pub fn hash_key(v: &Value) -> Option<String> {
    Some(match v {
        Value::Null => return None,
        Value::Int(i) => format!("n:{i}"),
        Value::Float(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => format!("n:{}", *f as i64),
        Value::Float(f) => format!("f:{}", f.to_bits()),
        Value::String(s) => format!("s:{s}"),
        other => format!("j:{}", other.to_json_string()),
    })
}

pub fn eval_bool(e: &PExpr, env: &Env) -> bool {
    eval(e, env).as_bool() == Some(true)
}

pub fn eval(e: &PExpr, env: &Env) -> EvalValue {
    match e {
        PExpr::Const(v) => EvalValue::V(v.clone()),
        PExpr::Param(i) => EvalValue::V(env.params.get(*i).cloned().unwrap_or(Value::Null)),
        PExpr::Var(s) => match env.slot(*s) {
            Some(b) => EvalValue::V(b.rec.doc.to_value()),
            None => EvalValue::NULL,
        },
        PExpr::Path(s, path) => match env.slot(*s) {
            Some(b) => {
                let mut cur = b.rec.doc.get(&path[0]);
                for p in &path[1..] {
                    cur = cur.and_then(|v| v.get(p));
                }
                EvalValue::V(cur.cloned().unwrap_or(Value::Null))
            }
            None => EvalValue::NULL,
        },
        PExpr::Field(base, name) => match eval(base, env) {
            EvalValue::V(v) => EvalValue::V(v.get(name).cloned().unwrap_or(Value::Null)),
            _ => EvalValue::NULL,
        },
        PExpr::Time(f, s) => {
            let Some(b) = env.slot(*s) else { return EvalValue::NULL };
            let origin = Some(b.node);
            let ts = match (f, env.times) {
                (TimeFn::ActiveTimestamp, _) => b.rec.active_ts,
                (TimeFn::Previous, Times::Attached) => b.prev,
                (TimeFn::Current, Times::Attached) => b.curr,
                (TimeFn::Previous, Times::Constant { prev, .. }) => return EvalValue::Ts { ts: prev, origin: None },
                (TimeFn::Current, Times::Constant { curr, .. }) => return EvalValue::Ts { ts: curr, origin: None },
            };
            match ts {
                Some(ts) => EvalValue::Ts { ts, origin },
                None => EvalValue::NULL,
            }
        }
        PExpr::Now => EvalValue::V(Value::Datetime(env.now)),
        PExpr::Call(b, args) => {
            let vals: Vec<EvalValue> = args.iter().map(|a| eval(a, env)).collect();
            call(*b, vals)
        }
        PExpr::Not(inner) => match eval(inner, env).as_bool() {
            Some(b) => EvalValue::V(Value::Bool(!b)),
            None => EvalValue::NULL,
        },
        PExpr::Neg(inner) => match eval(inner, env) {
            EvalValue::V(Value::Int(i)) => EvalValue::V(Value::Int(i.wrapping_neg())),
            EvalValue::V(Value::Float(f)) => EvalValue::V(Value::Float(-f)),
            EvalValue::V(Value::Duration(d)) => EvalValue::V(Value::Duration(-d)),
            _ => EvalValue::NULL,
        },
        PExpr::Binary(op, l, r) => binary(*op, l, r, env),
        PExpr::Object(fields) => {
            let mut o = Object::new();
            for (k, v) in fields {
                o.insert(k.clone(), eval(v, env).into_value());
            }
            EvalValue::V(Value::Object(o))
        }
        PExpr::Array(items) => EvalValue::V(Value::Array(items.iter().map(|i| eval(i, env).into_value()).collect())),
        PExpr::Agg(i) => EvalValue::V(Value::Int(env.aggs.get(*i).copied().unwrap_or(0))),
        PExpr::Lookup(i) => {
            let table = &env.lookups[*i];
            let candidates: &[Arc<Bound>] = match &table.keyed {
                Some((outer, map)) => {
                    match hash_key(&eval(outer, env).into_value()).and_then(|k| map.get(&k)) {
                        Some(v) => v,
                        None => &[],
                    }
                }
                None => &table.all,
            };
            let mut out = Vec::new();
            for cand in candidates {
                let inner = env.with_extra(table.slot, cand);
                if table.pred.as_ref().is_none_or(|p| eval_bool(p, &inner)) {
                    out.push(eval(&table.value, &inner).into_value());
                }
            }
            EvalValue::V(Value::Array(out))
        }
    }
}

fn call(b: Builtin, mut args: Vec<EvalValue>) -> EvalValue {
    let v = |e: &EvalValue| match e {
        EvalValue::V(v) => Some(v.clone()),
        EvalValue::Ts { .. } => None,
    };
    let out = match b {
        Builtin::SpatialDistance => match (v(&args[0]).and_then(|a| a.as_point()), v(&args[1]).and_then(|b| b.as_point())) {
            (Some(a), Some(b)) => Value::Float(spatial_distance(a, b)),
            _ => Value::Null,
        },
        Builtin::Datetime => match &args[0] {
            EvalValue::V(Value::String(s)) => crate::time::parse_datetime(s).map(Value::Datetime).unwrap_or(Value::Null),
            EvalValue::V(Value::Datetime(d)) => Value::Datetime(*d),
            EvalValue::Ts { ts, .. } => Value::Datetime(ts.micros),
            _ => Value::Null,
        },
        Builtin::Duration => match &args[0] {
            EvalValue::V(Value::String(s)) => crate::time::parse_duration(s).map(Value::Duration).unwrap_or(Value::Null),
            EvalValue::V(Value::Duration(d)) => Value::Duration(*d),
            _ => Value::Null,
        },
        Builtin::ObjectMerge => {
            let second = args.pop().and_then(|e| v(&e));
            let first = args.pop().and_then(|e| v(&e));
            match (first, second) {
                (Some(Value::Object(mut a)), Some(Value::Object(b))) => {
                    for (k, val) in b {
                        a.entry(k).or_insert(val);
                    }
                    Value::Object(a)
                }
                _ => Value::Null,
            }
        }
        Builtin::Point => match (v(&args[0]).and_then(|a| a.as_f64()), v(&args[1]).and_then(|b| b.as_f64())) {
            (Some(x), Some(y)) => Point::new(x, y).map(Value::Point).unwrap_or(Value::Null),
            _ => Value::Null,
        },
    };
    EvalValue::V(out)
}

/// Orders two evaluated values, counting comparisons between timestamps
/// drawn from different node clocks.
pub fn compare(a: &EvalValue, b: &EvalValue, cross: &AtomicU64) -> Option<Ordering> {
    match (a, b) {
        (EvalValue::V(x), EvalValue::V(y)) => compare_values(x, y),
        (EvalValue::Ts { ts: x, origin: ox }, EvalValue::Ts { ts: y, origin: oy }) => {
            if let (Some(ox), Some(oy)) = (ox, oy) {
                if ox != oy {
                    cross.fetch_add(1, AtomicOrdering::Relaxed);
                }
            }
            Some(x.cmp(y))
        }
        (EvalValue::Ts { ts, .. }, EvalValue::V(Value::Datetime(d))) => Some(ts.cmp_datetime(*d)),
        (EvalValue::V(Value::Datetime(d)), EvalValue::Ts { ts, .. }) => Some(ts.cmp_datetime(*d).reverse()),
        _ => None,
    }
}

fn binary(op: BinaryOp, l: &PExpr, r: &PExpr, env: &Env) -> EvalValue {
    match op {
        BinaryOp::And => {
            let a = eval(l, env).as_bool();
            if a == Some(false) {
                return EvalValue::V(Value::Bool(false));
            }
            match (a, eval(r, env).as_bool()) {
                (_, Some(false)) => EvalValue::V(Value::Bool(false)),
                (Some(true), Some(true)) => EvalValue::V(Value::Bool(true)),
                _ => EvalValue::NULL,
            }
        }
        BinaryOp::Or => {
            let a = eval(l, env).as_bool();
            if a == Some(true) {
                return EvalValue::V(Value::Bool(true));
            }
            match (a, eval(r, env).as_bool()) {
                (_, Some(true)) => EvalValue::V(Value::Bool(true)),
                (Some(false), Some(false)) => EvalValue::V(Value::Bool(false)),
                _ => EvalValue::NULL,
            }
        }
        BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
            let a = eval(l, env);
            let b = eval(r, env);
            if a.is_null() || b.is_null() {
                return EvalValue::NULL;
            }
            let ord = compare(&a, &b, env.cross);
            let result = match (op, ord) {
                (BinaryOp::Eq, Some(o)) => o == Ordering::Equal,
                (BinaryOp::Ne, Some(o)) => o != Ordering::Equal,
                (BinaryOp::Lt, Some(o)) => o == Ordering::Less,
                (BinaryOp::Le, Some(o)) => o != Ordering::Greater,
                (BinaryOp::Gt, Some(o)) => o == Ordering::Greater,
                (BinaryOp::Ge, Some(o)) => o != Ordering::Less,
                // Same-typed values without an order (points, arrays) are simply unequal.
                (BinaryOp::Eq | BinaryOp::Ne, None) if same_kind(&a, &b) => op == BinaryOp::Ne,
                _ => return EvalValue::NULL,
            };
            EvalValue::V(Value::Bool(result))
        }
        BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => arithmetic(op, eval(l, env), eval(r, env)),
    }
}

fn same_kind(a: &EvalValue, b: &EvalValue) -> bool {
    match (a, b) {
        (EvalValue::V(x), EvalValue::V(y)) => x.type_name() == y.type_name(),
        _ => false,
    }
}

fn arithmetic(op: BinaryOp, a: EvalValue, b: EvalValue) -> EvalValue {
    use Value::*;
    let out = match (op, a, b) {
        (BinaryOp::Add, EvalValue::Ts { ts, origin }, EvalValue::V(Duration(d)))
        | (BinaryOp::Add, EvalValue::V(Duration(d)), EvalValue::Ts { ts, origin }) => {
            return EvalValue::Ts { ts: ts.shifted(d), origin }
        }
        (BinaryOp::Sub, EvalValue::Ts { ts, origin }, EvalValue::V(Duration(d))) => {
            return EvalValue::Ts { ts: ts.shifted(-d), origin }
        }
        (_, EvalValue::Ts { .. }, _) | (_, _, EvalValue::Ts { .. }) => Null,
        (op, EvalValue::V(x), EvalValue::V(y)) => match (op, x, y) {
            (BinaryOp::Add, Int(a), Int(b)) => a.checked_add(b).map(Int).unwrap_or(Null),
            (BinaryOp::Sub, Int(a), Int(b)) => a.checked_sub(b).map(Int).unwrap_or(Null),
            (BinaryOp::Mul, Int(a), Int(b)) => a.checked_mul(b).map(Int).unwrap_or(Null),
            (BinaryOp::Div, Int(a), Int(b)) => {
                if b == 0 {
                    Null
                } else {
                    Float(a as f64 / b as f64)
                }
            }
            (op, a @ (Int(_) | Float(_)), b @ (Int(_) | Float(_))) => {
                let (x, y) = (a.as_f64().unwrap_or(0.0), b.as_f64().unwrap_or(0.0));
                let r = match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    _ => x / y,
                };
                if r.is_finite() {
                    Float(r)
                } else {
                    Null
                }
            }
            (BinaryOp::Add, Datetime(t), Duration(d)) | (BinaryOp::Add, Duration(d), Datetime(t)) => Datetime(t + d),
            (BinaryOp::Sub, Datetime(t), Duration(d)) => Datetime(t - d),
            (BinaryOp::Sub, Datetime(a), Datetime(b)) => Duration(a - b),
            (BinaryOp::Add, Duration(a), Duration(b)) => Duration(a + b),
            (BinaryOp::Sub, Duration(a), Duration(b)) => Duration(a - b),
            _ => Null,
        },
    };
    EvalValue::V(out)
}

/// Evaluates an expression that reads no records.
pub fn eval_standalone(e: &PExpr, params: &[Value], now: i64) -> Value {
    let cross = AtomicU64::new(0);
    let env = Env { row: &[], extra: None, params, now, times: Times::Attached, aggs: &[], lookups: &[], cross: &cross };
    eval(e, &env).into_value()
}

/// Renders an expression with slot and parameter names, for EXPLAIN.
pub fn render(e: &PExpr, slot_name: &dyn Fn(usize) -> String, param_name: &dyn Fn(usize) -> String) -> String {
    let r = |x: &PExpr| render(x, slot_name, param_name);
    let wrap = |x: &PExpr| match x {
        PExpr::Binary(op, ..) if !op.is_comparison() => format!("({})", r(x)),
        _ => r(x),
    };
    match e {
        PExpr::Const(Value::String(s)) => serde_json::to_string(s).unwrap_or_default(),
        PExpr::Const(Value::Duration(d)) => format!("duration(\"{}\")", crate::time::format_duration(*d)),
        PExpr::Const(Value::Datetime(d)) => format!("datetime(\"{}\")", crate::time::format_datetime(*d)),
        PExpr::Const(v) => v.to_json_string(),
        PExpr::Param(i) => param_name(*i),
        PExpr::Var(s) => slot_name(*s),
        PExpr::Path(s, p) => {
            let mut out = slot_name(*s);
            for f in p {
                write!(out, ".{f}").unwrap();
            }
            out
        }
        PExpr::Field(b, f) => format!("{}.{f}", wrap(b)),
        PExpr::Time(f, s) => format!("{}({})", f.name(), slot_name(*s)),
        PExpr::Now => "current_datetime()".into(),
        PExpr::Call(b, args) => format!("{}({})", b.name(), args.iter().map(r).collect::<Vec<_>>().join(", ")),
        PExpr::Not(x) => format!("NOT {}", wrap(x)),
        PExpr::Neg(x) => format!("-{}", wrap(x)),
        PExpr::Binary(op, l, rr) => {
            let side = |x: &PExpr| match x {
                PExpr::Binary(inner, ..) if inner.precedence() < op.precedence() => format!("({})", r(x)),
                _ => r(x),
            };
            format!("{} {} {}", side(l), op.symbol(), side(rr))
        }
        PExpr::Object(fields) => {
            let parts: Vec<String> = fields.iter().map(|(k, v)| format!("{k:?}: {}", r(v))).collect();
            format!("{{{}}}", parts.join(", "))
        }
        PExpr::Array(items) => format!("[{}]", items.iter().map(r).collect::<Vec<_>>().join(", ")),
        PExpr::Agg(i) => format!("$agg{i}"),
        PExpr::Lookup(i) => format!("$lookup{i}"),
    }
}
