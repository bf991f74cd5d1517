//! Canonical text form of statements. Output reparses to an equal tree.

use std::fmt::Write;

use crate::time::format_duration;

use super::ast::*;
use super::parser::is_reserved;

pub fn print_statements(statements: &[Statement]) -> String {
    let mut out = String::new();
    for s in statements {
        out.push_str(&print_statement(s));
        out.push_str(";\n");
    }
    out
}

pub fn print_statement(stmt: &Statement) -> String {
    match stmt {
        Statement::CreateType(t) => {
            let modifier = if t.open { "OPEN " } else { "" };
            let fields: Vec<String> = t.fields.iter().map(|(f, ty)| format!("  {}: {}", ident(f), ident(ty))).collect();
            if fields.is_empty() {
                format!("CREATE TYPE {} AS {modifier}{{}}", ident(&t.name))
            } else {
                format!("CREATE TYPE {} AS {modifier}{{\n{}\n}}", ident(&t.name), fields.join(",\n"))
            }
        }
        Statement::CreateDataset(d) => format!(
            "CREATE {}DATASET {}({}) PRIMARY KEY {}",
            if d.active { "ACTIVE " } else { "" },
            ident(&d.name),
            ident(&d.type_name),
            ident(&d.primary_key)
        ),
        Statement::CreateIndex(i) => {
            let fields: Vec<String> = i.fields.iter().map(|f| ident(f)).collect();
            let mut s = format!("CREATE INDEX {} ON {}({})", ident(&i.name), ident(&i.dataset), fields.join(", "));
            if let Some(kind) = &i.kind {
                write!(s, " TYPE {}", ident(kind)).unwrap();
            }
            s
        }
        Statement::CreateFeed(f) => {
            let opts: Vec<String> = f
                .options
                .iter()
                .map(|(k, v)| {
                    let v = match v {
                        OptionValue::Str(s) => string(s),
                        OptionValue::Bool(b) => b.to_string(),
                        OptionValue::Int(i) => i.to_string(),
                    };
                    format!("  {} : {}", string(k), v)
                })
                .collect();
            if opts.is_empty() {
                format!("CREATE FEED {} WITH {{}}", ident(&f.name))
            } else {
                format!("CREATE FEED {} WITH {{\n{}\n}}", ident(&f.name), opts.join(",\n"))
            }
        }
        Statement::ConnectFeed(c) => {
            let mut s = format!("CONNECT FEED {} TO DATASET {}", ident(&c.feed), ident(&c.dataset));
            if let Some(f) = &c.function {
                write!(s, " APPLY FUNCTION {}", ident(f)).unwrap();
            }
            s
        }
        Statement::StartFeed { feed } => format!("START FEED {}", ident(feed)),
        Statement::CreateBroker(b) => format!("CREATE BROKER {} AT {}", ident(&b.name), string(&b.endpoint)),
        Statement::AlterBroker(b) => format!("ALTER BROKER {} AT {}", ident(&b.name), string(&b.endpoint)),
        Statement::CreateFunction(f) => {
            let body = match &f.body {
                FunctionBody::Query(q) => print_query(q, 1),
                FunctionBody::Expr(e) => format!("  {}", print_expr(e)),
            };
            format!("CREATE FUNCTION {}({}) {{\n{}\n}}", ident(&f.name), params(&f.params), body)
        }
        Statement::CreateChannel(c) => {
            let kind = match c.kind {
                ChannelKind::Repetitive => "REPETITIVE",
                ChannelKind::Continuous => "CONTINUOUS",
            };
            let push = if c.push { "PUSH " } else { "" };
            let mut s = format!("CREATE {kind} {push}CHANNEL {}", ident(&c.name));
            if let Some(p) = &c.params {
                write!(s, "({})", params(p)).unwrap();
            }
            let period = format!("PERIOD duration({})", string(&format_duration(c.period_micros)));
            match &c.body {
                ChannelBody::Using { function, arity } => {
                    write!(s, " USING {}@{arity} {period}", ident(function)).unwrap();
                }
                ChannelBody::Inline(q) => {
                    write!(s, " {period} {{\n{}\n}}", print_query(q, 1)).unwrap();
                }
            }
            s
        }
        Statement::DropChannel { name } => format!("DROP CHANNEL {}", ident(name)),
        Statement::Subscribe(sub) => {
            let args: Vec<String> = sub.args.iter().map(print_expr).collect();
            format!("SUBSCRIBE TO {}({}) ON {}", ident(&sub.channel), args.join(", "), ident(&sub.broker))
        }
        Statement::Insert(ins) => {
            let verb = if ins.upsert { "UPSERT" } else { "INSERT" };
            let docs = if ins.docs.len() == 1 && !matches!(ins.docs[0], Expr::Array(_)) {
                print_expr(&ins.docs[0])
            } else {
                format!("[{}]", ins.docs.iter().map(print_expr).collect::<Vec<_>>().join(", "))
            };
            format!("{verb} INTO {} {docs}", ident(&ins.dataset))
        }
        Statement::Query(q) => print_query(q, 0),
        Statement::Invoke { function, args } => {
            let args: Vec<String> = args.iter().map(print_expr).collect();
            format!("{}({})", ident(function), args.join(", "))
        }
        Statement::Explain(inner) => format!("EXPLAIN {}", print_statement(inner)),
    }
}

fn params(p: &[String]) -> String {
    p.iter().map(|s| ident(s)).collect::<Vec<_>>().join(", ")
}

pub fn print_query(q: &Query, indent: usize) -> String {
    let pad = "  ".repeat(indent);
    let select = match &q.select {
        Select::Value(e) => format!("{pad}SELECT VALUE {}", print_expr(e)),
        Select::Items(items) => {
            let parts: Vec<String> = items
                .iter()
                .map(|it| match &it.alias {
                    Some(a) => format!("{} AS {}", print_expr(&it.expr), ident(a)),
                    None => print_expr(&it.expr),
                })
                .collect();
            format!("{pad}SELECT {}", parts.join(", "))
        }
    };
    let from: Vec<String> = q.from.iter().map(|f| format!("{} {}", ident(&f.dataset), ident(&f.alias))).collect();
    let from = format!("{pad}FROM {}", from.join(", "));
    let mut lines = Vec::new();
    if q.select_first {
        lines.push(select.clone());
    }
    lines.push(from);
    if let Some(w) = &q.where_clause {
        lines.push(format!("{pad}WHERE {}", print_expr(w)));
    }
    if let Some(g) = &q.group_by {
        lines.push(format!("{pad}GROUP BY {}", print_expr(g)));
    }
    if !q.select_first {
        lines.push(select);
    }
    if !q.order_by.is_empty() {
        let items: Vec<String> =
            q.order_by.iter().map(|o| format!("{}{}", print_expr(&o.expr), if o.desc { " DESC" } else { "" })).collect();
        lines.push(format!("{pad}ORDER BY {}", items.join(", ")));
    }
    if let Some(n) = q.limit {
        lines.push(format!("{pad}LIMIT {n}"));
    }
    lines.join("\n")
}

/// Identifiers that would not lex back as themselves are backquoted.
pub fn ident(name: &str) -> String {
    let plain = name.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_alphanumeric() || c == '_')
        && !is_reserved(name)
        && !["true", "false", "null", "missing"].iter().any(|w| w.eq_ignore_ascii_case(name));
    if plain {
        name.to_string()
    } else {
        format!("`{name}`")
    }
}

fn string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

const ATOM: u8 = 8;
const NEG: u8 = 7;
const NOT: u8 = 3;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { op: UnaryOp::Not, .. } => NOT,
        Expr::Unary { op: UnaryOp::Neg, .. } => NEG,
        Expr::Literal(Literal::Int(i)) if *i < 0 => NEG,
        Expr::Literal(Literal::Float(f)) if f.is_sign_negative() => NEG,
        _ => ATOM,
    }
}

fn wrap(e: &Expr, min: u8) -> String {
    let s = print_expr(e);
    if precedence(e) < min {
        format!("({s})")
    } else {
        s
    }
}

fn float(f: f64) -> String {
    let s = format!("{f:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

pub fn print_expr(e: &Expr) -> String {
    match e {
        Expr::Literal(l) => match l {
            Literal::Null => "null".to_string(),
            Literal::Bool(b) => b.to_string(),
            Literal::Int(i) => i.to_string(),
            Literal::Float(f) => float(*f),
            Literal::Str(s) => string(s),
        },
        Expr::Ident(name) => ident(name),
        Expr::Field(base, name) => format!("{}.{}", wrap(base, ATOM), ident(name)),
        Expr::Star => "*".to_string(),
        Expr::Call { name, args } => {
            let args: Vec<String> = args.iter().map(print_expr).collect();
            format!("{}({})", ident(name), args.join(", "))
        }
        Expr::Unary { op: UnaryOp::Not, expr } => format!("NOT {}", wrap(expr, NOT)),
        Expr::Unary { op: UnaryOp::Neg, expr } => {
            // Parenthesize anything that would otherwise fold into a literal or form `--`.
            let inner = print_expr(expr);
            if precedence(expr) < ATOM || inner.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '.') {
                format!("-({inner})")
            } else {
                format!("-{inner}")
            }
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            let left_min = if op.is_comparison() { p + 1 } else { p };
            format!("{} {} {}", wrap(lhs, left_min), op.symbol(), wrap(rhs, p + 1))
        }
        Expr::Object(fields) => {
            let parts: Vec<String> = fields.iter().map(|(k, v)| format!("{}: {}", string(k), print_expr(v))).collect();
            format!("{{{}}}", parts.join(", "))
        }
        Expr::Array(items) => format!("[{}]", items.iter().map(print_expr).collect::<Vec<_>>().join(", ")),
        Expr::Subquery(q) => format!("({})", print_query(q, 0).replace('\n', " ")),
    }
}
