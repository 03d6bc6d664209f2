//! Live session service. Each WebSocket connection owns one session; finished
//! and aborted sessions keep their log and input trace for download. Any other
//! path is served from the static asset directory.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::stream::SplitSink;
use futures::{SinkExt, StreamExt};
use imyo_core::analysis::compute_metrics;
use imyo_core::runner::{Mode, ProtocolConfig, SessionSnapshot};
use imyo_core::wire::EventRecord;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::time::{Instant, MissedTickBehavior};
use tower_http::services::ServeDir;

use crate::envelope::{write_trace, Inbound, OutKind, Outbound};
use crate::live::{Clock, LiveSession};

/// A state message goes out every this many ticks: 33 Hz at the default tick.
pub const STATE_EVERY_TICKS: u64 = 3;

pub const DEFAULT_PORT: u16 = 8080;
pub const PORT_ENV: &str = "IMYO_PORT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Live,
    Finished,
    Aborted,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionInfo {
    pub id: u64,
    pub status: Status,
    pub clock: &'static str,
    pub seed: u64,
    pub mode: Mode,
    pub blocks: usize,
    pub t_ms: f64,
}

struct Entry {
    info: SessionInfo,
    log: Option<String>,
    trace: Option<String>,
}

#[derive(Clone, Default)]
pub struct Registry {
    inner: Arc<Mutex<(u64, BTreeMap<u64, Entry>)>>,
}

impl Registry {
    fn open(&self, protocol: &ProtocolConfig, clock: Clock) -> u64 {
        let mut g = self.inner.lock().expect("registry lock");
        g.0 += 1;
        let id = g.0;
        let info = SessionInfo {
            id,
            status: Status::Live,
            clock: clock_name(clock),
            seed: protocol.seed,
            mode: protocol.mode,
            blocks: protocol.blocks,
            t_ms: 0.0,
        };
        g.1.insert(
            id,
            Entry {
                info,
                log: None,
                trace: None,
            },
        );
        id
    }

    fn close(&self, id: u64, status: Status, live: &LiveSession) {
        let mut g = self.inner.lock().expect("registry lock");
        if let Some(e) = g.1.get_mut(&id) {
            e.info.status = status;
            e.info.t_ms = live.session().now_ms();
            e.log = Some(live.log().to_jsonl());
            e.trace = Some(write_trace(live.trace()));
        }
    }

    pub fn list(&self) -> Vec<SessionInfo> {
        let g = self.inner.lock().expect("registry lock");
        g.1.values().map(|e| e.info.clone()).collect()
    }

    fn get(&self, id: u64) -> Option<(SessionInfo, Option<String>, Option<String>)> {
        let g = self.inner.lock().expect("registry lock");
        g.1.get(&id).map(|e| (e.info.clone(), e.log.clone(), e.trace.clone()))
    }
}

fn clock_name(c: Clock) -> &'static str {
    match c {
        Clock::Realtime => "realtime",
        Clock::Input => "input",
    }
}

/// Query string accepted on `/ws`.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct SessionQuery {
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub blocks: Option<usize>,
    pub clock: Option<String>,
    pub timeout_ms: Option<f64>,
    pub dwell_ms: Option<f64>,
}

impl SessionQuery {
    pub fn build(&self) -> Result<(ProtocolConfig, Clock), String> {
        let mut p = ProtocolConfig::default();
        if let Some(s) = self.seed {
            p.seed = s;
        }
        if let Some(m) = &self.mode {
            p.mode = m.parse().map_err(|e: imyo_core::Error| e.to_string())?;
        }
        if let Some(b) = self.blocks {
            p.blocks = b;
        }
        if let Some(t) = self.timeout_ms {
            p.trial_timeout_ms = t;
        }
        if let Some(d) = self.dwell_ms {
            p.dwell_ms = d;
        }
        let clock = match &self.clock {
            Some(c) => c.parse()?,
            None => Clock::Realtime,
        };
        Ok((p, clock))
    }
}

pub fn router(registry: Registry, assets: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/ws", get(ws_handler))
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/log", get(session_log))
        .route("/sessions/{id}/inputs", get(session_inputs))
        .with_state(registry);
    match assets {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.fallback(|| async { (StatusCode::NOT_FOUND, "no asset directory configured; start with --assets") }),
    }
}

/// Serves until the listener fails.
pub async fn run(listener: TcpListener, assets: Option<PathBuf>) -> std::io::Result<()> {
    axum::serve(listener, router(Registry::default(), assets)).await
}

async fn list_sessions(State(reg): State<Registry>) -> Json<Vec<SessionInfo>> {
    Json(reg.list())
}

async fn session_info(State(reg): State<Registry>, Path(id): Path<u64>) -> Response {
    match reg.get(id) {
        Some((info, ..)) => Json(info).into_response(),
        None => (StatusCode::NOT_FOUND, format!("no session {id}")).into_response(),
    }
}

async fn session_log(State(reg): State<Registry>, Path(id): Path<u64>) -> Response {
    download(reg, id, "log", |(_, log, _)| log)
}

async fn session_inputs(State(reg): State<Registry>, Path(id): Path<u64>) -> Response {
    download(reg, id, "inputs", |(_, _, trace)| trace)
}

type Stored = (SessionInfo, Option<String>, Option<String>);

fn download(reg: Registry, id: u64, what: &str, pick: fn(Stored) -> Option<String>) -> Response {
    let Some(stored) = reg.get(id) else {
        return (StatusCode::NOT_FOUND, format!("no session {id}")).into_response();
    };
    match pick(stored) {
        Some(body) => (
            [
                (header::CONTENT_TYPE, "application/x-ndjson".to_owned()),
                (
                    header::CONTENT_DISPOSITION,
                    format!("attachment; filename=\"session-{id}-{what}.jsonl\""),
                ),
            ],
            body,
        )
            .into_response(),
        None => (StatusCode::CONFLICT, format!("session {id} is still live")).into_response(),
    }
}

async fn ws_handler(ws: WebSocketUpgrade, Query(q): Query<SessionQuery>, State(reg): State<Registry>) -> Response {
    let (protocol, clock) = match q.build() {
        Ok(v) => v,
        Err(m) => return (StatusCode::BAD_REQUEST, m).into_response(),
    };
    let live = match LiveSession::new(protocol.clone(), clock) {
        Ok(l) => l,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    let id = reg.open(&protocol, clock);
    ws.on_upgrade(move |socket| connection(socket, live, id, clock, reg))
}

/// Outbound side of one connection. Keeps the per-connection stream
/// timestamp-monotone: events always go out, a state older than what was
/// already sent is dropped.
struct Outbox {
    sink: SplitSink<WebSocket, Message>,
    last_t: f64,
}

impl Outbox {
    async fn send(&mut self, msg: Outbound) -> bool {
        if msg.kind == OutKind::State && msg.t_ms < self.last_t {
            return true;
        }
        self.last_t = self.last_t.max(msg.t_ms);
        self.sink.send(Message::Text(msg.to_text().into())).await.is_ok()
    }

    async fn error(&mut self, message: &str) -> bool {
        let t = self.last_t;
        self.send(Outbound::error(message, t)).await
    }

    /// Sends events and an optional state interleaved by time.
    async fn flush(&mut self, events: Vec<EventRecord>, state: Option<SessionSnapshot>) -> bool {
        let cut = state.as_ref().map_or(f64::INFINITY, |s| s.t_ms);
        let (before, after): (Vec<_>, Vec<_>) = events.into_iter().partition(|e| e.t_ms <= cut);
        for e in &before {
            if !self.send(Outbound::event(e)).await {
                return false;
            }
        }
        if let Some(s) = &state {
            if !self.send(Outbound::state(s)).await {
                return false;
            }
        }
        for e in &after {
            if !self.send(Outbound::event(e)).await {
                return false;
            }
        }
        true
    }
}

enum Outcome {
    Finished,
    Dropped,
}

async fn connection(socket: WebSocket, mut live: LiveSession, id: u64, clock: Clock, reg: Registry) {
    let (sink, mut stream) = socket.split();
    let mut out = Outbox { sink, last_t: 0.0 };
    let hello = Outbound {
        kind: OutKind::Session,
        t_ms: 0.0,
        payload: json!({
            "id": id,
            "clock": clock_name(clock),
            "protocol": live.session().protocol(),
            "layout": live.session().layout(),
        }),
    };
    let mut outcome = Outcome::Dropped;
    if out.send(hello).await && out.flush(live.take_events(), Some(live.session().snapshot())).await {
        outcome = drive(&mut live, clock, &mut stream, &mut out).await;
    }
    match outcome {
        Outcome::Finished => {
            let events = live.take_events();
            let mut ok = out.flush(events, Some(live.session().snapshot())).await;
            if ok {
                let end_t = out.last_t;
                let msg = match compute_metrics(live.log(), None) {
                    Ok(report) => Outbound::metrics(&report, end_t),
                    Err(e) => Outbound::error(&format!("metrics: {e}"), end_t),
                };
                ok = out.send(msg).await;
            }
            if ok {
                let _ = out.sink.send(Message::Close(None)).await;
            }
            reg.close(id, Status::Finished, &live);
        }
        Outcome::Dropped => {
            live.close();
            eprintln!(
                "session {id}: connection dropped at {} ms, session aborted",
                live.session().now_ms()
            );
            reg.close(id, Status::Aborted, &live);
        }
    }
}

async fn drive(
    live: &mut LiveSession,
    clock: Clock,
    stream: &mut futures::stream::SplitStream<WebSocket>,
    out: &mut Outbox,
) -> Outcome {
    let tick_ms = live.session().protocol().tick_ms;
    let period = Duration::from_secs_f64(tick_ms / 1000.0);
    let mut timer = tokio::time::interval_at(Instant::now() + period, period);
    timer.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut ticks = 0u64;
    let mut last_state_t = 0.0;
    loop {
        tokio::select! {
            msg = stream.next() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => return Outcome::Dropped,
                    Some(Ok(_)) => continue,
                };
                let accepted = serde_json::from_str::<Inbound>(text.as_str())
                    .map_err(|e| format!("bad message: {e}"))
                    .and_then(|m| live.accept(m));
                if let Err(m) = accepted {
                    if !out.error(&m).await {
                        return Outcome::Dropped;
                    }
                }
                if live.finished() {
                    return Outcome::Finished;
                }
                if clock == Clock::Input {
                    let now = live.session().now_ms();
                    let state = (now >= last_state_t + STATE_EVERY_TICKS as f64 * tick_ms)
                        .then(|| live.session().snapshot());
                    if state.is_some() {
                        last_state_t = now;
                    }
                    if !out.flush(live.take_events(), state).await {
                        return Outcome::Dropped;
                    }
                }
            }
            deadline = timer.tick(), if clock == Clock::Realtime => {
                live.tick();
                ticks += 1;
                if live.finished() {
                    return Outcome::Finished;
                }
                let behind = Instant::now().saturating_duration_since(deadline) > period;
                let state = (ticks.is_multiple_of(STATE_EVERY_TICKS) && !behind).then(|| live.session().snapshot());
                if !out.flush(live.take_events(), state).await {
                    return Outcome::Dropped;
                }
            }
        }
    }
}
