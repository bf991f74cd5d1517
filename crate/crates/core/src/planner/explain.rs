use std::fmt::Write;

use crate::dsl::ChannelKind;

use super::exec::{choose_join_strategy, JoinStrategy, Side};
use super::expr::{render, PExpr};
use super::{CompiledQuery, Output, Source, TimeBound};

#[derive(Debug, Clone)]
pub enum ExplainHeader {
    Channel { name: String, kind: ChannelKind, push: bool },
    Query,
}

struct Printer<'a> {
    plan: &'a CompiledQuery,
    out: String,
}

impl Printer<'_> {
    fn line(&mut self, depth: usize, text: &str) {
        let _ = writeln!(self.out, "{}{}", "  ".repeat(depth), text);
    }

    fn expr(&self, e: &PExpr) -> String {
        let plan = self.plan;
        let slot = |s: usize| plan.aliases[s].clone();
        let param = |i: usize| {
            if plan.channel {
                format!("$sub.param{i}")
            } else {
                plan.param_names.get(i).cloned().unwrap_or_else(|| format!("${i}"))
            }
        };
        render(e, &slot, &param)
    }

    fn scan(&mut self, depth: usize, src: &Source) {
        let bound = |b: Option<TimeBound>, ts: &str| match b {
            Some(TimeBound::Prev) => format!("previous_channel_time({ts})"),
            Some(TimeBound::Curr) => format!("current_channel_time({ts})"),
            None => "none".into(),
        };
        let mut depth = depth;
        if let Some(f) = &src.filter {
            let text = format!("Select {}", self.expr(f));
            self.line(depth, &text);
            depth += 1;
        }
        let mut text = format!("DataScan {} {}", src.dataset, src.alias);
        if src.active {
            let _ = write!(
                text,
                " lower={} upper={} attach_prev={}",
                bound(src.lower, &src.alias),
                bound(src.upper, &src.alias),
                src.attach_prev
            );
        }
        self.line(depth, &text);
    }
}

/// Renders a plan as an indented operator tree. `estimates` are the stored
/// record counts of the two sources, used to show the join choice.
pub fn explain(plan: &CompiledQuery, header: &ExplainHeader, estimates: Option<(usize, usize)>) -> String {
    let mut p = Printer { plan, out: String::new() };
    let mut depth = 0;
    match header {
        ExplainHeader::Channel { name, kind, push } => {
            let kind = match kind {
                ChannelKind::Continuous => "continuous",
                ChannelKind::Repetitive => "repetitive",
            };
            let delivery = if *push { "eager" } else { "lazy" };
            p.line(0, &format!("ResultAssembly channel={name} kind={kind} delivery={delivery}"));
            depth = 1;
        }
        ExplainHeader::Query => {}
    }
    if !plan.order_by.is_empty() || plan.limit.is_some() {
        let keys: Vec<String> = plan.order_by.iter().map(|(e, d)| format!("{}{}", p.expr(e), if *d { " DESC" } else { "" })).collect();
        let mut text = format!("Order [{}]", keys.join(", "));
        if let Some(l) = plan.limit {
            let _ = write!(text, " limit={l}");
        }
        p.line(depth, &text);
        depth += 1;
    }
    let project = match &plan.output {
        Output::Value(e) => format!("Project VALUE {}", p.expr(e)),
        Output::Items(items) => {
            let parts: Vec<String> = items.iter().map(|(n, e)| format!("{} AS {n}", p.expr(e))).collect();
            format!("Project {}", parts.join(", "))
        }
    };
    p.line(depth, &project);
    depth += 1;
    if let Some(agg) = &plan.aggregation {
        let counts: Vec<String> = agg
            .counts
            .iter()
            .enumerate()
            .map(|(i, c)| format!("$agg{i}=count({})", c.as_ref().map_or("*".into(), |e| p.expr(e))))
            .collect();
        let mut text = format!("Aggregate {}", counts.join(", "));
        if let Some(g) = &agg.group {
            let _ = write!(text, " group={}", p.expr(g));
        }
        p.line(depth, &text);
        depth += 1;
    }
    for (i, l) in plan.lookups.iter().enumerate() {
        let mut text = format!("Lookup $lookup{i} {} {}", l.dataset, l.alias);
        if let Some((inner, outer)) = &l.key {
            let _ = write!(text, " key={} = {}", p.expr(inner), p.expr(outer));
        }
        if let Some(pred) = &l.pred {
            let _ = write!(text, " pred={}", p.expr(pred));
        }
        p.line(depth, &text);
    }
    if let Some(f) = &plan.post_filter {
        let text = format!("Select {}", p.expr(f));
        p.line(depth, &text);
        depth += 1;
    }
    if let Some(sj) = &plan.sub_join {
        let mut text = "Join subscriptions".to_string();
        if sj.equi.is_empty() {
            text.push_str(" strategy=nested-loop");
        } else {
            let keys: Vec<String> = sj.equi.iter().map(|(e, i)| format!("{} = $sub.param{i}", p.expr(e))).collect();
            let _ = write!(text, " strategy=hash keys=[{}]", keys.join(", "));
        }
        if let Some(pred) = &sj.pred {
            let _ = write!(text, " pred={}", p.expr(pred));
        }
        p.line(depth, &text);
        depth += 1;
        if let ExplainHeader::Channel { name, .. } = header {
            p.line(depth, "Join brokers strategy=broadcast broadcast=Brokers");
            p.line(depth + 1, "DataScan Brokers b");
            p.line(depth + 1, &format!("DataScan {name}Subscriptions s"));
        }
    }
    match &plan.join {
        Some(join) => {
            let mut text = "Join".to_string();
            if !plan.optimized && join.equi.is_empty() && join.pred.is_none() {
                text.push_str(" strategy=cross-product");
            } else {
                let choice = estimates.map(|(l, r)| choose_join_strategy(join, l, r));
                let side = |s: Side| match s {
                    Side::Left => plan.sources[0].alias.clone(),
                    Side::Right => plan.sources[1].alias.clone(),
                };
                match (join.equi.is_empty(), choice) {
                    (false, Some(JoinStrategy::Hash { build })) => {
                        let _ = write!(text, " strategy=hash build={}", side(build));
                    }
                    (false, _) => text.push_str(" strategy=hash"),
                    (true, Some(JoinStrategy::BroadcastNestedLoop { broadcast })) => {
                        let _ = write!(text, " strategy=broadcast-nested-loop broadcast={}", side(broadcast));
                    }
                    (true, _) => text.push_str(" strategy=broadcast-nested-loop"),
                }
                if !join.equi.is_empty() {
                    let keys: Vec<String> = join.equi.iter().map(|(l, r)| format!("{} = {}", p.expr(l), p.expr(r))).collect();
                    let _ = write!(text, " keys=[{}]", keys.join(", "));
                }
                if let Some(pred) = &join.pred {
                    let _ = write!(text, " pred={}", p.expr(pred));
                }
            }
            p.line(depth, &text);
            for src in &plan.sources {
                p.scan(depth + 1, src);
            }
        }
        None => p.scan(depth, &plan.sources[0]),
    }
    p.out
}
