//! Supportable-subscriber search for a local-area tweet channel.
//!
//! Ingestion runs on virtual clocks; each channel execution is timed on the
//! wall clock. A subscriber count is sustainable when the median execution
//! finishes within the period.

use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Discard;
use crate::channels::StageTimings;
use crate::cluster::ClusterConfig;
use crate::engine::{Engine, EngineConfig};
use crate::error::{EngineError, ErrorKind, Result};
use crate::time::MICROS_PER_SECOND;
use crate::value::{Object, Value};

pub const BENCH_CHANNELS: &[&str] = &["NewLocalHatefulTweets"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchParams {
    pub channel: String,
    /// Incoming tweets per second.
    pub rate: f64,
    pub period_seconds: f64,
    pub nodes: usize,
    pub area_codes: usize,
    /// Timed executions per probe, after one warm-up.
    pub executions: usize,
    pub max_subscribers: usize,
    /// Persist results for broker pulls instead of pushing them.
    pub lazy: bool,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            channel: "NewLocalHatefulTweets".into(),
            rate: 20.0,
            period_seconds: 10.0,
            nodes: 1,
            area_codes: 100,
            executions: 3,
            max_subscribers: 1 << 16,
            lazy: true,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageMillis {
    pub load_subscriptions: f64,
    pub load_new_data: f64,
    pub join: f64,
    pub persist_results: f64,
    pub deliver: f64,
    pub total: f64,
}

impl From<&StageTimings> for StageMillis {
    fn from(t: &StageTimings) -> Self {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        StageMillis {
            load_subscriptions: ms(t.load_subscriptions),
            load_new_data: ms(t.load_new_data),
            join: ms(t.join),
            persist_results: ms(t.persist_results),
            deliver: ms(t.deliver),
            total: ms(t.total()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub subscribers: usize,
    pub total_ms: f64,
    pub sustainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub channel: String,
    pub rate: f64,
    pub period_seconds: f64,
    pub nodes: usize,
    pub max_subscribers: usize,
    /// The search hit `BenchParams::max_subscribers` without overrunning.
    pub capped: bool,
    /// Stage breakdown at `max_subscribers`.
    pub timings: StageMillis,
    pub probes: Vec<Probe>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn validate(p: &BenchParams) -> Result<()> {
    let bad = |m: String| Err(EngineError::new(ErrorKind::ParseError, m));
    if !BENCH_CHANNELS.contains(&p.channel.as_str()) {
        return bad(format!("unknown bench channel `{}` (known: {})", p.channel, BENCH_CHANNELS.join(", ")));
    }
    if p.rate < 0.0 || p.period_seconds <= 0.0 || p.nodes == 0 || p.area_codes == 0 || p.executions == 0 {
        return bad("rate must be non-negative; period, nodes, area codes and executions positive".into());
    }
    Ok(())
}

fn schema(p: &BenchParams) -> String {
    let push = if p.lazy { "" } else { " PUSH" };
    format!(
        r#"
CREATE TYPE Tweet AS OPEN {{ tid: bigint, area_code: string }};
CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;
CREATE FEED TweetFeed WITH {{ "type-name": "Tweet", "format": "JSON", "insert-feed": true }};
CONNECT FEED TweetFeed TO DATASET Tweets;
START FEED TweetFeed;
CREATE BROKER Sink AT "http://sink.invalid/api";
CREATE CONTINUOUS{push} CHANNEL {}(area_code) PERIOD duration("PT{}S") {{
  SELECT t FROM Tweets t WHERE t.area_code = area_code AND is_new(t)
}};
"#,
        p.channel, p.period_seconds
    )
}

fn area(i: usize) -> String {
    format!("A{i:04}")
}

/// Median stage timings of `executions` timed runs with `subscribers`
/// subscriptions spread over the area codes.
pub fn measure(p: &BenchParams, subscribers: usize) -> Result<StageTimings> {
    validate(p)?;
    let offsets = vec![0; p.nodes];
    let mut ec = EngineConfig::new(ClusterConfig::virtual_nodes(&offsets));
    ec.parallel = true;
    ec.cluster.seed = p.seed;
    let engine = Engine::new(ec)?;
    engine.set_transport(Arc::new(Discard));
    engine.run_script(&schema(p))?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    for i in 0..subscribers {
        engine.subscribe(&p.channel, vec![Value::str(area(i % p.area_codes))], "Sink")?;
    }
    let period = (p.period_seconds * MICROS_PER_SECOND as f64) as i64;
    let per_tick = (p.rate * p.period_seconds).round() as usize;
    let mut tid = 0i64;
    let mut samples = Vec::new();
    for round in 0..=p.executions {
        for _ in 0..per_tick {
            let mut o = Object::new();
            o.insert("tid".into(), Value::Int(tid));
            o.insert("area_code".into(), Value::str(area(rng.gen_range(0..p.area_codes))));
            o.insert("hateful_flag".into(), Value::Bool(rng.gen_bool(0.1)));
            engine.ingest_value("TweetFeed", &Value::Object(o))?;
            tid += 1;
        }
        let ran = engine.advance(period);
        let Some((_, rec)) = ran.into_iter().last() else {
            return Err(EngineError::new(ErrorKind::ExpectationFailed, "bench channel did not execute"));
        };
        if !rec.success {
            return Err(EngineError::new(ErrorKind::ExpectationFailed, rec.error.unwrap_or_default()));
        }
        if round > 0 {
            samples.push(rec.timings);
        }
    }
    samples.sort_by_key(|t| t.total());
    Ok(samples.swap_remove(samples.len() / 2))
}

/// Doubles the subscriber count until an execution overruns the period,
/// then binary-searches the boundary to within about 6%.
pub fn run_bench(p: &BenchParams) -> Result<BenchReport> {
    validate(p)?;
    let budget = Duration::from_secs_f64(p.period_seconds);
    let mut probes = Vec::new();
    let mut best: Option<(usize, StageTimings)> = None;
    let probe = |n: usize, probes: &mut Vec<Probe>| -> Result<(bool, StageTimings)> {
        let t = measure(p, n)?;
        let ok = t.total() < budget;
        probes.push(Probe { subscribers: n, total_ms: t.total().as_secs_f64() * 1e3, sustainable: ok });
        Ok((ok, t))
    };

    let mut lo = 0usize;
    let mut hi = None;
    let mut n = 1usize;
    while n <= p.max_subscribers {
        let (ok, t) = probe(n, &mut probes)?;
        if !ok {
            hi = Some(n);
            break;
        }
        lo = n;
        best = Some((n, t));
        n *= 2;
    }
    let capped = hi.is_none();
    if capped && lo < p.max_subscribers {
        let (ok, t) = probe(p.max_subscribers, &mut probes)?;
        if ok {
            lo = p.max_subscribers;
            best = Some((lo, t));
        } else {
            hi = Some(p.max_subscribers);
        }
    }
    if let Some(mut hi) = hi {
        while hi - lo > (lo / 16).max(1) {
            let mid = lo + (hi - lo) / 2;
            let (ok, t) = probe(mid, &mut probes)?;
            if ok {
                lo = mid;
                best = Some((mid, t));
            } else {
                hi = mid;
            }
        }
    }
    let timings = best.as_ref().map(|(_, t)| StageMillis::from(t)).unwrap_or_default();
    Ok(BenchReport {
        channel: p.channel.clone(),
        rate: p.rate,
        period_seconds: p.period_seconds,
        nodes: p.nodes,
        max_subscribers: lo,
        capped: capped && lo == p.max_subscribers,
        timings,
        probes,
    })
}
