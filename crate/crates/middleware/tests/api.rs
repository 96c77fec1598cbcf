use std::net::Ipv4Addr;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use futures::future::BoxFuture;
use http_body_util::BodyExt;
use meshgate_core::config::{Config, RuleConfig};
use meshgate_core::gateway::GatewayStatus;
use meshgate_core::mote::{ACK, NAK};
use meshgate_middleware::{
    router, rule_cycle, AppState, CommandAck, CommandError, CommandTransport, GatewayStatusSource, ManualClock,
    NoGateway, ReadingStore, RuleEngine,
};
use serde_json::{json, Value};
use tower::ServiceExt;

const NOW: u64 = 1_767_225_600_000;

#[derive(Clone)]
struct FakeMotes {
    reply: Result<u8, CommandError>,
    calls: Arc<Mutex<Vec<(Ipv4Addr, u8, u8)>>>,
}

impl FakeMotes {
    fn replying(reply: Result<u8, CommandError>) -> Self {
        FakeMotes { reply, calls: Arc::default() }
    }
}

impl CommandTransport for FakeMotes {
    fn send(&self, mote: Ipv4Addr, appliance_id: u8, value: u8) -> BoxFuture<'static, Result<CommandAck, CommandError>> {
        self.calls.lock().unwrap().push((mote, appliance_id, value));
        let reply = self.reply.clone().map(|ack| CommandAck { ack, rtt_ms: 1.5 });
        Box::pin(async move { reply })
    }
}

struct Harness {
    state: AppState,
    clock: ManualClock,
    motes: FakeMotes,
}

fn harness_with(motes: FakeMotes, gateway: Arc<dyn GatewayStatusSource>) -> Harness {
    let clock = ManualClock::new(NOW);
    let state = AppState::new(
        &Config::defaults(),
        ReadingStore::memory(),
        Arc::new(clock.clone()),
        Arc::new(motes.clone()),
        gateway,
    );
    Harness { state, clock, motes }
}

fn harness() -> Harness {
    harness_with(FakeMotes::replying(Ok(ACK)), Arc::new(NoGateway))
}

impl Harness {
    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
            .unwrap();
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn ingest(&self, mote: u16, appliance: u8, seq: u32, ts: u64, watts_mw: u64) -> (StatusCode, Value) {
        let body = json!({ "mote_id": mote, "appliance_id": appliance, "seq": seq, "timestamp_ms": ts, "watts_mw": watts_mw });
        self.call("POST", "/ingest", Some(body)).await
    }
}

#[tokio::test]
async fn accepted_reading_is_queryable() {
    let h = harness();
    let (st, body) = h.ingest(3, 1, 1, NOW, 60_000).await;
    assert_eq!((st, body["status"].as_str()), (StatusCode::OK, Some("accepted")));
    let (st, latest) = h.call("GET", "/motes/3/latest", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(latest["watts_mw"], 60_000);
    assert_eq!(latest["watts"], 60.0);
    let (_, motes) = h.call("GET", "/motes", None).await;
    assert_eq!(
        motes,
        json!([{ "mote_id": 3, "virtual_ipv4": "10.77.0.3", "appliances": [1], "link_status": "up" }])
    );
    h.clock.set(NOW + 60_000);
    let (_, motes) = h.call("GET", "/motes", None).await;
    assert_eq!(motes[0]["link_status"], "down");
}

#[tokio::test]
async fn duplicate_leaves_store_unchanged() {
    let h = harness();
    h.ingest(3, 1, 7, NOW, 1000).await;
    let (st, body) = h.ingest(3, 1, 7, NOW, 999_999).await;
    assert_eq!((st, body["status"].as_str()), (StatusCode::OK, Some("duplicate")));
    let (_, latest) = h.call("GET", "/motes/3/latest", None).await;
    assert_eq!(latest["watts_mw"], 1000);
    assert_eq!(h.state.store.read().unwrap().len(), 1);
}

#[tokio::test]
async fn implausible_and_skewed_readings_are_filtered() {
    let h = harness();
    let (st, body) = h.ingest(1, 1, 1, NOW, 1_000_000_000).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "filtered");
    assert!(body["reason"].as_str().unwrap().contains("plausible"));
    let (st, _) = h.ingest(1, 1, 2, NOW - 3_600_001, 1000).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, _) = h.ingest(1, 1, 3, NOW + 3_600_000, 1000).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(h.state.store.read().unwrap().len(), 1);
}

#[tokio::test]
async fn malformed_bodies_are_bad_requests() {
    let h = harness();
    for body in [json!({ "mote_id": 1 }), json!({ "mote_id": "x", "appliance_id": 1, "seq": 1, "timestamp_ms": NOW, "watts_mw": 1 }), json!([1, 2])] {
        let (st, _) = h.call("POST", "/ingest", Some(body)).await;
        assert_eq!(st, StatusCode::BAD_REQUEST);
    }
    let (st, _) = h.call("POST", "/ingest", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn empty_store_has_no_latest() {
    let h = harness();
    assert_eq!(h.call("GET", "/motes/1/latest", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(h.call("GET", "/motes/1/readings?window_s=60", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn constant_series_has_that_mean() {
    let h = harness();
    for k in 0..60u64 {
        h.ingest(2, 1, k as u32 + 1, NOW - 59_000 + k * 1000, 100_000).await;
    }
    let (st, body) = h.call("GET", "/motes/2/readings?window_s=60", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["readings"].as_array().unwrap().len(), 60);
    assert_eq!(body["aggregates"], json!([{ "appliance_id": 1, "samples": 60, "mean_watts": 100.0 }]));
}

#[tokio::test]
async fn windowed_aggregate_matches_brute_force() {
    let h = harness();
    let mut raw = Vec::new();
    for k in 0..120u64 {
        let appliance = 1 + (k % 2) as u8;
        let on = (k / 7) % 2 == 0;
        let mw = if on { 40_000 + (k * 7919 % 20_000) } else { 0 };
        let ts = NOW - 119_000 + k * 1000;
        h.ingest(5, appliance, k as u32 + 1, ts, mw).await;
        raw.push((appliance, ts, mw));
    }
    let window_s = 45;
    let (_, body) = h.call("GET", &format!("/motes/5/readings?window_s={window_s}"), None).await;
    let since = NOW - window_s * 1000;
    for agg in body["aggregates"].as_array().unwrap() {
        let a = agg["appliance_id"].as_u64().unwrap() as u8;
        let xs: Vec<f64> =
            raw.iter().filter(|(ap, ts, _)| *ap == a && *ts >= since).map(|(_, _, mw)| *mw as f64 / 1000.0).collect();
        let oracle = xs.iter().sum::<f64>() / xs.len() as f64;
        assert_eq!(agg["samples"].as_u64().unwrap() as usize, xs.len());
        assert!((agg["mean_watts"].as_f64().unwrap() - oracle).abs() < 1e-9);
    }
    let seqs: Vec<u64> = body["readings"].as_array().unwrap().iter().map(|r| r["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (75..=120).collect::<Vec<_>>());
}

#[tokio::test]
async fn command_outcomes_map_to_statuses() {
    let h = harness();
    let (st, body) = h.call("POST", "/motes/3/appliances/1/command", Some(json!({ "value": 1 }))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["ack"], ACK);
    assert_eq!(*h.motes.calls.lock().unwrap(), vec![(Ipv4Addr::new(10, 77, 0, 3), 1, 1)]);

    let nak = harness_with(FakeMotes::replying(Ok(NAK)), Arc::new(NoGateway));
    assert_eq!(nak.call("POST", "/motes/3/appliances/9/command", Some(json!({ "value": 0 }))).await.0, StatusCode::BAD_GATEWAY);

    let lost = harness_with(FakeMotes::replying(Err(CommandError::Timeout)), Arc::new(NoGateway));
    assert_eq!(lost.call("POST", "/motes/3/appliances/1/command", Some(json!({ "value": 0 }))).await.0, StatusCode::GATEWAY_TIMEOUT);
}

#[tokio::test]
async fn invalid_command_value_is_rejected_before_sending() {
    let h = harness();
    for body in [json!({ "value": 2 }), json!({ "value": "on" }), json!({})] {
        let (st, _) = h.call("POST", "/motes/3/appliances/1/command", Some(body)).await;
        assert_eq!(st, StatusCode::BAD_REQUEST);
    }
    assert!(h.motes.calls.lock().unwrap().is_empty());
}

#[tokio::test]
async fn buffer_status_is_proxied() {
    let h = harness();
    assert_eq!(h.call("GET", "/buffer/status", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    let gw = Arc::new(GatewayStatus::default());
    gw.buffer_depth.store(12, std::sync::atomic::Ordering::SeqCst);
    let h = harness_with(FakeMotes::replying(Ok(ACK)), gw);
    let (st, body) = h.call("GET", "/buffer/status", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body, json!({ "buffer_depth": 12, "middleware_link": "down" }));
}

#[tokio::test]
async fn event_stream_carries_new_readings() {
    let h = harness();
    let req = Request::builder().uri("/events").body(Body::empty()).unwrap();
    let resp = router(h.state.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    h.ingest(4, 1, 1, NOW, 2500).await;
    let frame = body.frame().await.unwrap().unwrap().into_data().unwrap();
    let text = String::from_utf8(frame.to_vec()).unwrap();
    assert!(text.starts_with("event: reading\n"), "{text}");
    assert!(text.contains("\"watts_mw\":2500"), "{text}");
}

#[tokio::test]
async fn rule_turns_appliance_off_once_per_excursion() {
    let mut cfg = Config::defaults();
    cfg.middleware.rules = vec![RuleConfig { mote_id: 2, appliance_id: 1, threshold_watts: 100.0, sustain_seconds: 10 }];
    let h = harness();
    let engine = Mutex::new(RuleEngine::new(&cfg.middleware.rules));
    let mut fired = Vec::new();
    for k in 0..30u64 {
        let ts = NOW + k * 1000;
        h.clock.set(ts);
        h.ingest(2, 1, k as u32 + 1, ts, 110_000).await;
        fired.extend(rule_cycle(&h.state, &engine).await);
    }
    assert_eq!(fired.len(), 1);
    assert_eq!(*h.motes.calls.lock().unwrap(), vec![(Ipv4Addr::new(10, 77, 0, 2), 1, 0)]);
}
