//! HTTP surface under `/v1`.
//!
//! | method | path | body |
//! |--------|------|------|
//! | GET | `/v1/state` | |
//! | POST | `/v1/command/key` | `{"key": "#"}` (name or keypad symbol) |
//! | POST | `/v1/command/mode` | `{"mode": "SCAN"}` |
//! | POST | `/v1/command/motion` | `{"enabled": true}` |
//! | POST | `/v1/command/jog` | `{"axis": "x", "direction": 1, "count": 1}` |
//! | POST | `/v1/routine/dance` | optional dance parameters |
//! | POST | `/v1/routine/scan` | optional grid parameters |
//! | POST | `/v1/flapper` | `{"flapper_hz": 13.0}` |
//! | POST | `/v1/clock/advance` | `{"ticks": 1000}` (manual clock only) |
//! | GET | `/v1/log` | |
//! | GET | `/v1/events` | server-sent snapshot stream |
//!
//! Command responses are `{"accepted", "mode", "state"}` plus `"error"` on
//! failure. Malformed bodies give 400, parameter errors 422 and refused
//! transitions 409.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{Command, Hub, Reply};
use crate::controller::{ControllerError, Key, Mode};
use crate::dance::DanceParams;
use crate::scan::GridSpec;
use crate::stage::Axis;

type Shared = Arc<Hub>;

pub fn router(hub: Shared) -> Router {
    Router::new()
        .route("/v1/state", get(state))
        .route("/v1/log", get(log))
        .route("/v1/events", get(events))
        .route("/v1/command/key", post(key))
        .route("/v1/command/mode", post(mode))
        .route("/v1/command/motion", post(motion))
        .route("/v1/command/jog", post(jog))
        .route("/v1/routine/dance", post(routine_dance))
        .route("/v1/routine/scan", post(routine_scan))
        .route("/v1/flapper", post(flapper))
        .route("/v1/clock/advance", post(advance))
        .with_state(hub)
}

pub async fn serve(addr: &str, hub: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(hub)).await
}

fn error_body(status: StatusCode, name: &str, message: String) -> Response {
    (status, Json(json!({"accepted": false, "error": {"name": name, "message": message}}))).into_response()
}

fn schema_error(message: String) -> Response {
    error_body(StatusCode::BAD_REQUEST, "SchemaViolation", message)
}

#[allow(clippy::result_large_err)]
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| schema_error(e.to_string()))
}

/// Empty bodies mean "use the configured defaults".
#[allow(clippy::result_large_err)]
fn parse_optional<T: DeserializeOwned>(body: &Bytes) -> Result<Option<T>, Response> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    parse(body).map(Some)
}

fn status_for(e: &ControllerError) -> StatusCode {
    match e {
        ControllerError::UnknownKey(_) | ControllerError::UnknownMode(_) => StatusCode::BAD_REQUEST,
        ControllerError::InvalidParams(_) | ControllerError::Dance(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ControllerError::Scan(crate::scan::ScanError::Stage(_)) => StatusCode::CONFLICT,
        ControllerError::Scan(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ControllerError::RejectedTransition { .. }
        | ControllerError::AbortedByEndstop { .. }
        | ControllerError::Stage(_) => StatusCode::CONFLICT,
    }
}

fn command_response(reply: Reply) -> Response {
    match reply {
        Reply::State(Ok(s)) => Json(json!({"accepted": true, "mode": s.mode, "state": s})).into_response(),
        Reply::State(Err(e)) => error_body(status_for(&e), e.name(), e.to_string()),
        Reply::ClockBusy => error_body(StatusCode::CONFLICT, "ClockNotManual", "clock runs in real time".into()),
        Reply::Snapshot(s) => Json(json!(s)).into_response(),
        Reply::Log(l) => Json(json!(l)).into_response(),
    }
}

async fn run(hub: &Hub, cmd: Command) -> Response {
    command_response(hub.request(cmd).await)
}

async fn state(State(hub): State<Shared>) -> Response {
    run(&hub, Command::Snapshot).await
}

async fn log(State(hub): State<Shared>) -> Response {
    run(&hub, Command::Log).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyBody {
    key: String,
}

async fn key(State(hub): State<Shared>, body: Bytes) -> Response {
    let b: KeyBody = match parse(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    match b.key.parse::<Key>() {
        Ok(k) => run(&hub, Command::Key(k)).await,
        Err(e) => schema_error(e.to_string()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeBody {
    mode: String,
}

async fn mode(State(hub): State<Shared>, body: Bytes) -> Response {
    let b: ModeBody = match parse(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    match b.mode.parse::<Mode>() {
        Ok(m) => run(&hub, Command::Mode(m)).await,
        Err(e) => schema_error(e.to_string()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionBody {
    enabled: bool,
}

async fn motion(State(hub): State<Shared>, body: Bytes) -> Response {
    match parse::<MotionBody>(&body) {
        Ok(b) => run(&hub, Command::Motion(b.enabled)).await,
        Err(r) => r,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JogBody {
    axis: String,
    direction: i8,
    #[serde(default = "one")]
    count: u32,
}

fn one() -> u32 {
    1
}

async fn jog(State(hub): State<Shared>, body: Bytes) -> Response {
    let b: JogBody = match parse(&body) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let axis = match b.axis.to_ascii_lowercase().as_str() {
        "x" => Axis::X,
        "y" => Axis::Y,
        other => return schema_error(format!("axis must be \"x\" or \"y\", got {other:?}")),
    };
    if b.direction != 1 && b.direction != -1 {
        return schema_error(format!("direction must be 1 or -1, got {}", b.direction));
    }
    if b.count == 0 || b.count > 100 {
        return schema_error(format!("count must be in 1..=100, got {}", b.count));
    }
    run(&hub, Command::Jog { axis, direction: b.direction, count: b.count }).await
}

async fn routine_dance(State(hub): State<Shared>, body: Bytes) -> Response {
    match parse_optional::<DanceParams>(&body) {
        Ok(p) => run(&hub, Command::Dance(p)).await,
        Err(r) => r,
    }
}

async fn routine_scan(State(hub): State<Shared>, body: Bytes) -> Response {
    match parse_optional::<GridSpec>(&body) {
        Ok(g) => run(&hub, Command::Scan(g)).await,
        Err(r) => r,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlapperBody {
    flapper_hz: f64,
}

async fn flapper(State(hub): State<Shared>, body: Bytes) -> Response {
    match parse::<FlapperBody>(&body) {
        Ok(b) => run(&hub, Command::Flapper(b.flapper_hz)).await,
        Err(r) => r,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceBody {
    ticks: u64,
}

async fn advance(State(hub): State<Shared>, body: Bytes) -> Response {
    match parse::<AdvanceBody>(&body) {
        Ok(b) => run(&hub, Command::Advance(b.ticks)).await,
        Err(r) => r,
    }
}

fn snapshot_stream(hub: &Hub) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = hub.subscribe();
    futures::stream::unfold((rx, true), |(mut rx, first)| async move {
        if !first && rx.changed().await.is_err() {
            return None;
        }
        let snap = rx.borrow_and_update().clone();
        let data: Value = json!(snap);
        let event = Event::default().event("snapshot").id(snap.seq.to_string()).data(data.to_string());
        Some((Ok(event), (rx, false)))
    })
}

async fn events(State(hub): State<Shared>) -> impl IntoResponse {
    Sse::new(snapshot_stream(&hub)).keep_alive(KeepAlive::default())
}
