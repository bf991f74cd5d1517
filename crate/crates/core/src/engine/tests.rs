use std::collections::BTreeSet;

use super::*;
use crate::brokers::{MemoryTransport, ReferenceBroker};
use crate::time::MICROS_PER_SECOND;

const SECOND: i64 = MICROS_PER_SECOND;

const SCHEMA: &str = r#"
CREATE TYPE Tweet AS OPEN { tid: bigint, location: point };
CREATE TYPE OfficerLocation AS OPEN { oid: string, location: point };
CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;
CREATE ACTIVE DATASET OfficerLocations(OfficerLocation) PRIMARY KEY oid;
CREATE FEED TweetFeed WITH { "type-name": "Tweet", "format": "JSON", "insert-feed": true };
CREATE FEED LocationFeed WITH { "type-name": "OfficerLocation", "format": "JSON", "insert-feed": false };
CONNECT FEED TweetFeed TO DATASET Tweets;
CONNECT FEED LocationFeed TO DATASET OfficerLocations;
START FEED TweetFeed;
START FEED LocationFeed;
CREATE BROKER B1 AT "http://broker-one.test/api";
"#;

fn channel(kind: &str, name: &str, cond: &str, push: bool) -> String {
    let push = if push { " PUSH" } else { "" };
    format!(
        r#"CREATE {kind}{push} CHANNEL {name}(oid) PERIOD duration("PT10S") {{
  SELECT t.tid AS tid FROM OfficerLocations o, Tweets t
  WHERE spatial_distance(t.location, o.location) < 5 AND o.oid = oid
    AND t.hateful_flag = true AND {cond}
}};"#
    )
}

fn engine(offsets_ms: &[i64]) -> Arc<Engine> {
    let mut cfg = ClusterConfig::virtual_nodes(offsets_ms);
    cfg.seed = 7;
    let e = Engine::new(EngineConfig::new(cfg)).unwrap();
    e.run_script(SCHEMA).unwrap();
    e
}

fn officer(e: &Engine, oid: &str, x: f64, y: f64) {
    e.ingest("LocationFeed", &format!(r#"{{"oid":"{oid}","location":{{"$point":[{x},{y}]}}}}"#)).unwrap();
}

fn tweet(e: &Engine, tid: i64, x: f64, y: f64) {
    e.ingest("TweetFeed", &format!(r#"{{"tid":{tid},"location":{{"$point":[{x},{y}]}},"hateful_flag":true}}"#)).unwrap();
}

/// The Fig 26 timeline; returns (subscriber param, tid) pairs per execution.
fn replay(e: &Engine, name: &str) -> Vec<BTreeSet<(String, i64)>> {
    let u10 = e.subscribe(name, vec![Value::str("u10")], "B1").unwrap();
    let u20 = e.subscribe(name, vec![Value::str("u20")], "B1").unwrap();
    officer(e, "u10", 0.0, 0.0);
    officer(e, "u20", 0.0, 10.0);
    e.advance(9 * SECOND);
    tweet(e, 100, 0.0, 3.0);
    e.advance(4 * SECOND);
    officer(e, "u20", 0.0, 7.0);
    e.advance(9 * SECOND);
    officer(e, "u10", 0.0, 3.0);
    e.advance(6 * SECOND);
    tweet(e, 200, 0.0, 4.0);
    e.advance(2 * SECOND);
    let who = |id: &str| if id == u10 { "u10" } else if id == u20 { "u20" } else { "?" }.to_string();
    e.channel_history(name)
        .unwrap()
        .iter()
        .map(|r| {
            assert!(r.success, "{:?}", r.error);
            r.notifications.iter().map(|n| (who(&n.subscription_id), n.result.get("tid").unwrap().as_f64().unwrap() as i64)).collect()
        })
        .collect()
}

fn set(items: &[(&str, i64)]) -> BTreeSet<(String, i64)> {
    items.iter().map(|(u, t)| (u.to_string(), *t)).collect()
}

#[test]
fn new_nearby_tweets_timeline() {
    for offsets in [vec![0], vec![-200, 350], vec![4000, -4000, 0, 1500]] {
        let e = engine(&offsets);
        e.run_script(&channel("CONTINUOUS", "CQNewNearbyHatefulTweets", "is_new(t)", false)).unwrap();
        let got = replay(&e, "CQNewNearbyHatefulTweets");
        assert_eq!(got, vec![set(&[("u10", 100)]), set(&[]), set(&[("u10", 200), ("u20", 200)])], "offsets {offsets:?}");
        assert_eq!(e.cluster().cross_node_comparisons().load(Ordering::SeqCst), 0);
    }
}

#[test]
fn active_officers_timeline_excludes_stale_locations() {
    let e = engine(&[0, 100]);
    e.run_script(&channel("CONTINUOUS", "ActiveOfficers", "is_new(t) AND is_new(o)", false)).unwrap();
    let got = replay(&e, "ActiveOfficers");
    assert_eq!(got, vec![set(&[("u10", 100)]), set(&[]), set(&[("u10", 200)])]);
}

#[test]
fn executions_follow_fixed_rate() {
    let e = engine(&[0]);
    e.run_script(&channel("CONTINUOUS", "C", "is_new(t)", false)).unwrap();
    let start = e.cluster().now();
    e.advance(35 * SECOND);
    let times: Vec<i64> = e.channel_history("C").unwrap().iter().map(|r| (r.time - start) / SECOND).collect();
    assert_eq!(times, vec![10, 20, 30]);
}

#[test]
fn delay_shifts_one_dispatch_only() {
    let e = engine(&[0]);
    e.run_script(&channel("CONTINUOUS", "C", "is_new(t)", false)).unwrap();
    let start = e.cluster().now();
    e.advance(15 * SECOND);
    e.delay_next_execution("C", SECOND / 2).unwrap();
    e.advance(20 * SECOND);
    let times: Vec<i64> = e.channel_history("C").unwrap().iter().map(|r| (r.time - start) / 1000).collect();
    assert_eq!(times, vec![10_000, 20_500, 30_000]);
}

#[test]
fn stalled_execution_terminates_the_channel() {
    let e = engine(&[0]);
    e.run_script(&channel("CONTINUOUS", "C", "is_new(t)", false)).unwrap();
    e.subscribe("C", vec![Value::str("u10")], "B1").unwrap();
    officer(&e, "u10", 0.0, 0.0);
    tweet(&e, 1, 0.0, 1.0);
    e.advance(10 * SECOND);
    e.stall_next_execution("C", 11 * SECOND).unwrap();
    tweet(&e, 2, 0.0, 1.0);
    e.advance(30 * SECOND);
    let h = e.channel_history("C").unwrap();
    assert_eq!(h.len(), 2);
    assert!(h[0].success && !h[1].success);
    assert!(h[1].error.as_deref().unwrap().contains("ChannelOverrun"));
    assert_eq!(e.channel_state("C").unwrap(), ChannelState::Terminated);
    assert!(e.execute_channel_now("C").is_err());
}

#[test]
fn lazy_delivery_persists_and_pings() {
    let e = engine(&[0, 0]);
    let transport = Arc::new(MemoryTransport::new());
    let broker = Arc::new(ReferenceBroker::new("B1"));
    broker.set_source(e.result_source());
    let b = broker.clone();
    transport.route("http://broker-one.test/api", move |path, body| b.handle(path, body));
    e.set_transport(transport.clone());
    e.run_script(&channel("CONTINUOUS", "C", "is_new(t)", false)).unwrap();
    assert!(e.has_dataset("CResults") && e.has_dataset("CSubscriptions"));
    let got = replay(&e, "C");
    assert_eq!(got[0], set(&[("u10", 100)]));

    let sent = transport.sent();
    assert_eq!(sent.len(), 2, "no ping for the empty execution");
    assert!(sent.iter().all(|(url, _)| url == "http://broker-one.test/api/notify"));
    let ids: Vec<usize> = sent.iter().map(|(_, body)| body["subscriptionIds"].as_array().unwrap().len()).collect();
    assert_eq!(ids, vec![1, 2]);

    let h = e.channel_history("C").unwrap();
    let first = &h[0].notifications[0];
    let iso = format_datetime(first.execution_time);
    let pulled = e.pull("C", &iso, &first.subscription_id).unwrap();
    assert_eq!(pulled.len(), 1);
    assert_eq!(pulled[0].get("tid"), Some(&Value::Int(100)));

    for n in h.iter().flat_map(|r| &r.notifications) {
        broker.register_sink(&n.subscription_id);
    }
    broker.replay_parked();
    // Sinks registered after the pings were queued: nothing was pulled yet.
    assert_eq!(broker.pump(), 0);
    for (_, body) in &sent {
        broker.handle("/notify", body).unwrap();
    }
    broker.pump();
    for n in h.iter().flat_map(|r| &r.notifications) {
        let log = broker.log(&n.subscription_id);
        assert!(log.iter().any(|d| d.result["tid"] == n.result.get("tid").unwrap().to_json()), "{log:?}");
    }
}

#[test]
fn eager_delivery_pushes_payloads_without_results_dataset() {
    let e = engine(&[0]);
    let transport = Arc::new(MemoryTransport::new());
    transport.route("http://broker-one.test/api", |_, _| Ok(()));
    e.set_transport(transport.clone());
    e.run_script(&channel("CONTINUOUS", "P", "is_new(t)", true)).unwrap();
    assert!(!e.has_dataset("PResults"));
    replay(&e, "P");
    let sent = transport.sent();
    assert_eq!(sent.len(), 2);
    assert_eq!(sent[0].0, "http://broker-one.test/api/results");
    assert_eq!(sent[0].1["notifications"][0]["result"]["tid"], 100);
    assert_eq!(e.pull("P", &format_datetime(0), "x").unwrap_err().kind, ErrorKind::DatasetNotFound);
}

#[test]
fn unreachable_broker_is_logged_not_fatal() {
    let e = engine(&[0]);
    let transport = Arc::new(MemoryTransport::new());
    transport.route("http://broker-one.test/api", |_, _| Ok(()));
    transport.set_down("http://broker-one.test/api", true);
    e.set_transport(transport);
    e.run_script(&channel("CONTINUOUS", "C", "is_new(t)", false)).unwrap();
    let got = replay(&e, "C");
    assert_eq!(got[2].len(), 2);
    let h = e.channel_history("C").unwrap();
    assert!(h[0].success && !h[0].delivery_errors.is_empty());
}

#[test]
fn repetitive_count_channel_notifies_each_subscription() {
    let e = engine(&[0, 0, 0]);
    e.run_script(
        r#"
CREATE FUNCTION RecentNearbyHatefulTweetsCount(oid) {
  FROM OfficerLocations o, Tweets t
  WHERE o.oid = oid AND t.hateful_flag = true
    AND spatial_distance(t.location, o.location) < 5
    AND t.timestamp > current_datetime() - day_time_duration("PT1H")
  SELECT count(*) AS HatefulTweetsNum, current_datetime() AS CurrentTime
};
CREATE REPETITIVE CHANNEL RecentNearbyHatefulTweetCountChannel
  USING RecentNearbyHatefulTweetsCount@1 PERIOD duration("PT10M");
CREATE BROKER B2 AT "http://broker-two.test/api";
"#,
    )
    .unwrap();
    let now = format_datetime(e.cluster().now());
    for (oid, x, y) in [("10", 40.0, 40.0), ("20", 15.0, 15.0), ("30", 80.0, 0.0)] {
        officer(&e, oid, x, y);
    }
    for (tid, x, y) in [(100, 40.0, 60.0), (200, 15.0, 15.0), (300, 18.0, 18.0)] {
        e.ingest(
            "TweetFeed",
            &format!(r#"{{"tid":{tid},"location":{{"$point":[{x},{y}]}},"hateful_flag":true,"timestamp":{{"$datetime":"{now}"}}}}"#),
        )
        .unwrap();
    }
    let s1 = e.subscribe("RecentNearbyHatefulTweetCountChannel", vec![Value::str("20")], "B1").unwrap();
    e.subscribe("RecentNearbyHatefulTweetCountChannel", vec![Value::str("30")], "B2").unwrap();
    let s4 = e.subscribe("RecentNearbyHatefulTweetCountChannel", vec![Value::str("20")], "B2").unwrap();
    let rec = e.execute_channel_now("RecentNearbyHatefulTweetCountChannel").unwrap();
    let mut got: Vec<(String, String, i64)> = rec
        .notifications
        .iter()
        .map(|n| (n.subscription_id.clone(), n.broker_name.clone(), n.result.get("HatefulTweetsNum").unwrap().as_f64().unwrap() as i64))
        .collect();
    got.sort();
    let mut want = vec![(s1, "B1".to_string(), 2), (s4, "B2".to_string(), 2)];
    want.sort();
    assert_eq!(got, want);
    assert!(rec.notifications[0].broker_endpoint.contains("broker-"));
}

#[test]
fn function_invocation_and_ingest_transform() {
    let e = engine(&[0]);
    e.run_script(
        r#"
CREATE FUNCTION AddIngestionTime(incoming_record) {
  object_merge({"ingested_timestamp": current_datetime()}, incoming_record)
};
CREATE TYPE School AS OPEN { sid: int };
CREATE DATASET Schools(School) PRIMARY KEY sid;
CREATE FEED SchoolFeed WITH { "insert-feed": true };
CONNECT FEED SchoolFeed TO DATASET Schools APPLY FUNCTION AddIngestionTime;
"#,
    )
    .unwrap();
    e.ingest("SchoolFeed", r#"{"sid":1,"name":"x"}"#).unwrap();
    let rows = e.run_script("SELECT VALUE s FROM Schools s;").unwrap().pop().unwrap();
    let s = &rows.rows()[0];
    assert_eq!(s.get("ingested_timestamp"), Some(&Value::Datetime(e.cluster().now())));
    assert_eq!(s.get("name"), Some(&Value::str("x")));

    assert!(e.ingest("SchoolFeed", r#"{"sid":1}"#).is_err(), "insert feed rejects duplicate keys");
    assert!(e.ingest("SchoolFeed", "{oops").is_err());
    let c = e.feed_counters("SchoolFeed").unwrap();
    assert_eq!((c.accepted, c.persisted, c.rejected), (3, 1, 2));

    let merged = e.invoke("AddIngestionTime", vec![Value::Object([("a".to_string(), Value::Int(1))].into_iter().collect())]).unwrap();
    assert_eq!(merged[0].get("a"), Some(&Value::Int(1)));
}

#[test]
fn upsert_feed_keeps_latest_location() {
    let e = engine(&[0, 0]);
    officer(&e, "u10", 0.0, 0.0);
    officer(&e, "u10", 5.0, 5.0);
    let rows = e.run_script("SELECT VALUE o.location FROM OfficerLocations o;").unwrap().pop().unwrap();
    assert_eq!(rows.rows(), &[Value::point(5.0, 5.0).unwrap()]);
}

#[test]
fn catalog_errors() {
    let e = engine(&[0]);
    let kind = |s: &str| e.run_script(s).unwrap_err().kind;
    assert_eq!(kind("CREATE BROKER B1 AT \"http://x.test/\";"), ErrorKind::DuplicateName);
    assert_eq!(kind("CREATE BROKER B9 AT \"not a url\";"), ErrorKind::ParseError);
    assert_eq!(kind("ALTER BROKER B9 AT \"http://x.test/\";"), ErrorKind::BrokerNotFound);
    assert_eq!(kind("CREATE TYPE Tweet AS { a: int };"), ErrorKind::DuplicateName);
    assert_eq!(kind("CREATE DATASET Tweets(Tweet) PRIMARY KEY tid;"), ErrorKind::DuplicateName);
    assert_eq!(kind(&channel("CONTINUOUS", "X", "is_new(z)", false)), ErrorKind::CompileError);
    assert_eq!(
        kind("CREATE CONTINUOUS CHANNEL Y(a) PERIOD duration(\"PT1S\") { SELECT t FROM Nope t WHERE is_new(t) };"),
        ErrorKind::DatasetNotFound
    );
    assert!(!e.has_dataset("YSubscriptions"), "failed creation leaves nothing behind");
    e.run_script(&channel("CONTINUOUS", "C", "is_new(t)", false)).unwrap();
    assert_eq!(kind(&channel("CONTINUOUS", "C", "is_new(t)", false)), ErrorKind::DuplicateName);
    assert_eq!(kind("SUBSCRIBE TO C(\"a\", \"b\") ON B1;"), ErrorKind::CompileError);
    assert_eq!(kind("SUBSCRIBE TO C(\"a\") ON Nobody;"), ErrorKind::BrokerNotFound);
    assert_eq!(kind("SUBSCRIBE TO Missing(\"a\") ON B1;"), ErrorKind::DatasetNotFound);
    let err = e.run_script("CREATE TYPE Z AS { a: int };\nSUBSCRIBE TO C(1, 2) ON B1;").unwrap_err();
    assert_eq!(err.location.unwrap().line, 2);

    e.run_script("DROP CHANNEL C;").unwrap();
    assert!(!e.has_dataset("CSubscriptions") && !e.has_dataset("CResults"));
}

#[test]
fn broker_update_leaves_subscriptions_untouched() {
    let e = engine(&[0, 0]);
    e.run_script(&channel("CONTINUOUS", "C", "is_new(t)", false)).unwrap();
    e.subscribe("C", vec![Value::str("u10")], "B1").unwrap();
    let dump = |e: &Engine| e.run_script("SELECT VALUE s FROM CSubscriptions s;").unwrap().pop().unwrap();
    let before = dump(&e);
    e.run_script("ALTER BROKER B1 AT \"http://moved.test/api\";").unwrap();
    assert_eq!(dump(&e), before);
    assert_eq!(e.brokers().unwrap(), vec![("B1".to_string(), "http://moved.test/api".to_string())]);
}

#[test]
fn adhoc_channel_times_are_constants() {
    let e = engine(&[0]);
    tweet(&e, 1, 0.0, 0.0);
    let now = e.cluster().now();
    let rows = e
        .run_script("SELECT previous_channel_time(t) AS p, current_channel_time(t) AS c FROM Tweets t;")
        .unwrap()
        .pop()
        .unwrap();
    assert_eq!(rows.rows()[0].get("p"), Some(&Value::Datetime(0)));
    assert_eq!(rows.rows()[0].get("c"), Some(&Value::Datetime(now)));
}

#[test]
fn visibility_lag_parks_records_until_due() {
    let e = engine(&[0]);
    e.inject_visibility_lag("Tweets", 2 * SECOND).unwrap();
    tweet(&e, 1, 0.0, 0.0);
    let count = |e: &Engine| e.run_script("SELECT VALUE t.tid FROM Tweets t;").unwrap().pop().unwrap().rows().len();
    assert_eq!(count(&e), 0);
    e.advance(SECOND);
    assert_eq!(count(&e), 0);
    e.advance(SECOND);
    assert_eq!(count(&e), 1);
}

#[test]
fn seeded_subscription_ids_repeat() {
    let ids = |_: ()| {
        let e = engine(&[0]);
        e.run_script(&channel("CONTINUOUS", "C", "is_new(t)", false)).unwrap();
        (0..3).map(|_| e.subscribe("C", vec![Value::str("u")], "B1").unwrap()).collect::<Vec<_>>()
    };
    let a = ids(());
    assert_eq!(a, ids(()));
    assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 3);
}

#[test]
fn explain_channel_shows_bounds() {
    let e = engine(&[0]);
    let text = e.run_script(&format!("EXPLAIN {}", channel("CONTINUOUS", "C", "is_new(t)", false))).unwrap();
    let StatementResult::Explain(plan) = &text[0] else { panic!() };
    assert!(plan.contains("DataScan Tweets t lower=previous_channel_time(t) upper=current_channel_time(t)"), "{plan}");
    assert!(!e.channel_names().contains(&"C".to_string()));
}
