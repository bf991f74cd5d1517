//! Seeded randomized workloads checked against the offline oracle.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{self, OracleReport, OracleSpec, OracleSubscription};
use super::Discard;
use crate::cluster::{virtual_origin, ClusterConfig};
use crate::engine::{Engine, EngineConfig};
use crate::error::{EngineError, ErrorKind, Result};
use crate::time::MICROS_PER_SECOND;
use crate::value::{Object, Point, Value};

pub const RANDOM_CHANNEL: &str = "NearbyHatefulTweets";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomParams {
    pub nodes: usize,
    /// Clock offsets are drawn uniformly from ±skew_ms.
    pub skew_ms: i64,
    /// Per-dispatch delay drawn uniformly from [0, jitter × period).
    pub jitter: f64,
    pub tweets_per_second: f64,
    pub location_updates_per_second: f64,
    pub officers: usize,
    pub period_seconds: f64,
    pub duration_seconds: f64,
    /// Continuous `is_new` channel, or the repetitive ingestion-time approximation.
    pub continuous: bool,
}

impl Default for RandomParams {
    fn default() -> Self {
        RandomParams {
            nodes: 4,
            skew_ms: 5_000,
            jitter: 0.5,
            tweets_per_second: 50.0,
            location_updates_per_second: 2.0,
            officers: 50,
            period_seconds: 10.0,
            duration_seconds: 200.0,
            continuous: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomReport {
    pub seed: u64,
    pub records: u64,
    pub executions: u64,
    pub oracle: OracleReport,
}

impl RandomReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

const GRID: f64 = 100.0;
const RADIUS: f64 = 5.0;

fn schema(p: &RandomParams) -> String {
    let period = format!("PT{}S", p.period_seconds);
    let window = if p.continuous {
        "is_new(t)".to_string()
    } else {
        format!(r#"t.ingested_timestamp > current_datetime() - duration("{period}")"#)
    };
    let kind = if p.continuous { "CONTINUOUS" } else { "REPETITIVE" };
    format!(
        r#"
CREATE TYPE Tweet AS OPEN {{ tid: bigint, location: point }};
CREATE TYPE OfficerLocation AS OPEN {{ oid: string, location: point }};
CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;
CREATE ACTIVE DATASET OfficerLocations(OfficerLocation) PRIMARY KEY oid;
CREATE FEED TweetFeed WITH {{ "type-name": "Tweet", "format": "JSON", "insert-feed": true }};
CREATE FEED LocationFeed WITH {{ "type-name": "OfficerLocation", "format": "JSON", "insert-feed": false }};
CONNECT FEED TweetFeed TO DATASET Tweets APPLY FUNCTION add_ingestion_time;
CONNECT FEED LocationFeed TO DATASET OfficerLocations;
START FEED TweetFeed;
START FEED LocationFeed;
CREATE BROKER Sink AT "http://sink.invalid/api";
CREATE {kind} CHANNEL {RANDOM_CHANNEL}(oid) PERIOD duration("{period}") {{
  SELECT t.tid AS tid FROM OfficerLocations o, Tweets t
  WHERE spatial_distance(t.location, o.location) < {RADIUS} AND o.oid = oid
    AND t.hateful_flag = true AND {window}
}};
"#
    )
}

fn validate(p: &RandomParams) -> Result<()> {
    let bad = |m: &str| Err(EngineError::new(ErrorKind::ParseError, m.to_string()));
    if p.nodes == 0 {
        return bad("nodes must be positive");
    }
    if p.period_seconds <= 0.0 || p.duration_seconds < 0.0 {
        return bad("period must be positive and duration non-negative");
    }
    if !(0.0..1.0).contains(&p.jitter) {
        return bad("jitter must lie in [0, 1)");
    }
    if p.officers == 0 || p.skew_ms < 0 || p.tweets_per_second < 0.0 || p.location_updates_per_second < 0.0 {
        return bad("officers, skew and rates must be non-negative (officers positive)");
    }
    Ok(())
}

fn located(key: &str, id: Value, at: (f64, f64)) -> Value {
    let mut o = Object::new();
    o.insert(key.into(), id);
    o.insert("location".into(), Value::Point(Point::new(at.0, at.1).expect("finite coordinates")));
    Value::Object(o)
}

enum Arrival {
    Tweet,
    Location,
}

/// Runs one seeded workload in virtual time and checks it with the oracle.
pub fn run_random(seed: u64, params: &RandomParams) -> Result<RandomReport> {
    validate(params)?;
    if params.duration_seconds == 0.0 {
        return Ok(RandomReport { seed, records: 0, executions: 0, oracle: OracleReport::default() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<i64> = (0..params.nodes).map(|_| rng.gen_range(-params.skew_ms..=params.skew_ms)).collect();
    let mut cfg = ClusterConfig::virtual_nodes(&offsets);
    cfg.record_events = true;
    cfg.seed = seed;
    let mut ec = EngineConfig::new(cfg);
    ec.parallel = true;
    let engine = Engine::new(ec)?;
    engine.set_transport(Arc::new(Discard));
    engine.run_script(&schema(params))?;

    let origin = virtual_origin();
    let period = (params.period_seconds * MICROS_PER_SECOND as f64) as i64;
    let duration = (params.duration_seconds * MICROS_PER_SECOND as f64) as i64;
    let spot = |rng: &mut ChaCha8Rng| (rng.gen_range(0.0..GRID), rng.gen_range(0.0..GRID));

    let mut subs = Vec::new();
    let mut records = 0u64;
    for i in 0..params.officers {
        let oid = format!("o{i}");
        engine.ingest_value("LocationFeed", &located("oid", Value::str(oid.clone()), spot(&mut rng)))?;
        records += 1;
        let id = engine.subscribe(RANDOM_CHANNEL, vec![Value::str(oid.clone())], "Sink")?;
        subs.push(OracleSubscription { id, label: oid.clone(), oid: serde_json::Value::String(oid) });
    }

    // Poisson-ish arrivals: exponential gaps per stream, merged by time.
    let gap = |rng: &mut ChaCha8Rng, rate: f64| -> i64 {
        if rate <= 0.0 {
            i64::MAX / 4
        } else {
            (-(1.0 - rng.gen::<f64>()).ln() / rate * MICROS_PER_SECOND as f64).max(1.0) as i64
        }
    };
    let mut next_tweet = gap(&mut rng, params.tweets_per_second);
    let mut next_loc = gap(&mut rng, params.location_updates_per_second);
    let jitter_max = (params.jitter * period as f64) as i64;
    let mut tid = 0i64;
    let jitter = |rng: &mut ChaCha8Rng| if jitter_max > 0 { rng.gen_range(0..jitter_max) } else { 0 };
    engine.delay_next_execution(RANDOM_CHANNEL, jitter(&mut rng))?;
    loop {
        let (at, arrival) = if next_tweet <= next_loc { (next_tweet, Arrival::Tweet) } else { (next_loc, Arrival::Location) };
        if at >= duration {
            break;
        }
        if !engine.advance_to(origin + at).is_empty() {
            engine.delay_next_execution(RANDOM_CHANNEL, jitter(&mut rng))?;
        }
        match arrival {
            Arrival::Tweet => {
                let mut doc = located("tid", Value::Int(tid), spot(&mut rng));
                if let Value::Object(o) = &mut doc {
                    o.insert("hateful_flag".into(), Value::Bool(rng.gen_bool(0.5)));
                }
                engine.ingest_value("TweetFeed", &doc)?;
                tid += 1;
                next_tweet += gap(&mut rng, params.tweets_per_second);
            }
            Arrival::Location => {
                let oid = format!("o{}", rng.gen_range(0..params.officers));
                engine.ingest_value("LocationFeed", &located("oid", Value::str(oid), spot(&mut rng)))?;
                next_loc += gap(&mut rng, params.location_updates_per_second);
            }
        }
        records += 1;
    }
    // One more period so records near the end are examined.
    engine.advance_to(origin + duration + period + jitter_max);

    let history = engine.channel_history(RANDOM_CHANNEL)?;
    let delivered: Vec<(String, serde_json::Value)> = history
        .iter()
        .filter(|r| r.success)
        .flat_map(|r| r.notifications.iter().map(|n| (n.subscription_id.clone(), n.result.get("tid").map(Value::to_json).unwrap_or_default())))
        .collect();
    let spec = OracleSpec { channel: RANDOM_CHANNEL.into(), tweets: "Tweets".into(), officers: "OfficerLocations".into(), max_distance: RADIUS };
    let report = oracle::check(&spec, &engine.cluster().events(), &subs, &delivered);
    Ok(RandomReport { seed, records, executions: history.len() as u64, oracle: report })
}
