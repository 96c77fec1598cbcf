use std::convert::Infallible;
use std::net::Ipv4Addr;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use meshgate_core::mote::{ACK, NAK};
use meshgate_core::reading::SensorReading;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast;

use crate::store::Inserted;
use crate::{AppState, CommandError};

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ingest", post(ingest))
        .route("/motes", get(motes))
        .route("/motes/{id}/readings", get(readings))
        .route("/motes/{id}/latest", get(latest))
        .route("/motes/{id}/appliances/{aid}/command", post(command))
        .route("/buffer/status", get(buffer_status))
        .route("/events", get(events))
        .with_state(state)
}

async fn ingest(State(s): State<AppState>, body: Bytes) -> Response {
    let r: SensorReading = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed reading: {e}")),
    };
    if let Err(why) = s.filter.check(&r, s.clock.now_ms()) {
        return (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": "filtered", "reason": why.to_string() })))
            .into_response();
    }
    let inserted = s.store.write().expect("store lock poisoned").insert(r);
    match inserted {
        Ok(status) => {
            if status == Inserted::Accepted {
                // No subscribers is not an error.
                let _ = s.events.send(r);
            }
            Json(json!({ "status": status })).into_response()
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("store: {e}")),
    }
}

async fn motes(State(s): State<AppState>) -> Response {
    let now = s.clock.now_ms();
    let store = s.store.read().expect("store lock poisoned");
    let list: Vec<_> = store
        .motes()
        .into_iter()
        .map(|(id, appliances)| {
            let fresh = store.latest(id).is_some_and(|r| now.saturating_sub(r.timestamp_ms) <= s.link_stale_ms);
            json!({
                "mote_id": id,
                "virtual_ipv4": s.addrmap.mote_virtual4(id),
                "appliances": appliances,
                "link_status": if fresh { "up" } else { "down" },
            })
        })
        .collect();
    Json(list).into_response()
}

#[derive(Deserialize)]
struct WindowQuery {
    window_s: Option<u64>,
}

fn reading_json(r: &SensorReading) -> serde_json::Value {
    json!({
        "mote_id": r.mote_id,
        "appliance_id": r.appliance_id,
        "seq": r.seq,
        "timestamp_ms": r.timestamp_ms,
        "watts_mw": r.watts_mw,
        "watts": r.watts(),
    })
}

async fn readings(State(s): State<AppState>, Path(id): Path<u16>, Query(q): Query<WindowQuery>) -> Response {
    let window_s = q.window_s.unwrap_or(s.retention_s);
    let since = s.clock.now_ms().saturating_sub(window_s.saturating_mul(1000));
    let store = s.store.read().expect("store lock poisoned");
    if store.latest(id).is_none() {
        return error(StatusCode::NOT_FOUND, format!("no readings for mote {id}"));
    }
    let series: Vec<_> = store.window(id, since).iter().map(reading_json).collect();
    Json(json!({
        "mote_id": id,
        "window_s": window_s,
        "readings": series,
        "aggregates": store.aggregates(id, since),
    }))
    .into_response()
}

async fn latest(State(s): State<AppState>, Path(id): Path<u16>) -> Response {
    match s.store.read().expect("store lock poisoned").latest(id) {
        Some(r) => Json(reading_json(&r)).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no readings for mote {id}")),
    }
}

async fn command(State(s): State<AppState>, Path((id, aid)): Path<(u16, u8)>, body: Bytes) -> Response {
    let value = match serde_json::from_slice::<serde_json::Value>(&body) {
        Ok(v) => v.get("value").and_then(|v| v.as_u64()),
        Err(_) => None,
    };
    let value = match value {
        Some(v @ (0 | 1)) => v as u8,
        _ => return error(StatusCode::BAD_REQUEST, "body must be {\"value\": 0|1}"),
    };
    let Some(target) = s.mote_target(id) else {
        return error(StatusCode::BAD_REQUEST, format!("mote {id} is outside the pool"));
    };
    match s.commands.send(target, aid, value).await {
        Ok(a) if a.ack == ACK => Json(json!({ "ack": a.ack, "rtt_ms": a.rtt_ms })).into_response(),
        Ok(a) => (
            StatusCode::BAD_GATEWAY,
            Json(json!({ "error": if a.ack == NAK { "rejected by mote" } else { "unexpected reply" }, "ack": a.ack })),
        )
            .into_response(),
        Err(CommandError::Timeout) => error(StatusCode::GATEWAY_TIMEOUT, "mote did not answer"),
        Err(e) => error(StatusCode::BAD_GATEWAY, e.to_string()),
    }
}

async fn buffer_status(State(s): State<AppState>) -> Response {
    match s.gateway.status() {
        Some(st) => Json(st).into_response(),
        None => error(StatusCode::SERVICE_UNAVAILABLE, "gateway status unavailable"),
    }
}

fn reading_stream(rx: broadcast::Receiver<SensorReading>) -> impl Stream<Item = Result<Event, Infallible>> {
    futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(r) => {
                    let ev = Event::default().event("reading").json_data(reading_json(&r)).expect("json event");
                    return Some((Ok(ev), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
}

async fn events(State(s): State<AppState>) -> impl IntoResponse {
    Sse::new(reading_stream(s.events.subscribe())).keep_alive(KeepAlive::default())
}

impl AppState {
    fn mote_target(&self, id: u16) -> Option<Ipv4Addr> {
        let a = self.addrmap.mote_virtual4(id);
        self.addrmap.in_pool(a).then_some(a)
    }
}

