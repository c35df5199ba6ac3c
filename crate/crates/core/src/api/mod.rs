//! Live sessions over HTTP, with a WebSocket push channel per session.
//!
//! Every mutation of a session runs under that session's lock on the
//! blocking pool, appends to its envelope history and broadcasts while the
//! lock is held, so subscribers see log order with no gaps.

mod envelope;

use std::collections::HashMap;
use std::future::Future;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use envelope::{Envelope, EnvelopeKind};

use crate::mediation::memory::StoreError;
use crate::metrics::{compute_partial_report, MetricsConfig};
use crate::model::{BackendKind, CuePayload, LogError, LogRecord, SessionLog, Timestamp, Verdict};
use crate::session::{CueInput, Runtime, Session, SessionConfig, SessionError};

/// Envelopes buffered per subscriber before it is considered lagged.
const CHANNEL_CAPACITY: usize = 1024;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn not_found(what: &str, id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("no {what} `{id}`"))
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::Ended(_) => (StatusCode::CONFLICT, "SESSION_ENDED"),
            SessionError::DuplicateRating(_) | SessionError::Log(LogError::DuplicateRating(_)) => {
                (StatusCode::CONFLICT, "DUPLICATE_RATING")
            }
            SessionError::UnknownPlan(_) => (StatusCode::NOT_FOUND, "UNKNOWN_PLAN"),
            SessionError::InvalidCue(_) => (StatusCode::UNPROCESSABLE_ENTITY, "INVALID_CUE"),
            SessionError::Log(LogError::TimeRegression { .. }) => (StatusCode::UNPROCESSABLE_ENTITY, "TIME_REGRESSION"),
            SessionError::Log(_) => (StatusCode::UNPROCESSABLE_ENTITY, "INVALID_RECORD"),
            SessionError::InvalidConfig(_) => (StatusCode::BAD_REQUEST, "INVALID_CONFIG"),
            SessionError::Store(StoreError::InvalidParticipant(_)) => (StatusCode::BAD_REQUEST, "INVALID_CONFIG"),
            SessionError::Store(_) => (StatusCode::SERVICE_UNAVAILABLE, "STORE_UNAVAILABLE"),
            SessionError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "LOG_WRITE"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// One running or ended session plus its push channel.
struct LiveSession {
    inner: Mutex<LiveInner>,
    tx: broadcast::Sender<Envelope>,
    opened: Instant,
}

struct LiveInner {
    session: Session,
    history: Vec<Envelope>,
}

impl LiveSession {
    /// Wall-clock offset of the session, never behind its log.
    fn now(&self, inner: &LiveInner) -> Timestamp {
        let wall = Timestamp(self.opened.elapsed().as_millis() as u64);
        wall.max(inner.session.last_ts())
    }

    fn publish(&self, inner: &mut LiveInner, env: Envelope) {
        inner.history.push(env.clone());
        // No subscribers is not an error.
        let _ = self.tx.send(env);
    }

    fn publish_records(&self, inner: &mut LiveInner, records: &[LogRecord]) {
        let mut actuated = false;
        for r in records {
            actuated |= matches!(r.body, crate::model::RecordBody::Actuation(_));
            self.publish(inner, Envelope::record(r));
        }
        if actuated {
            let snap = inner.session.actuator_snapshot();
            let seq = inner.session.log().len() as u64 - 1;
            self.publish(inner, Envelope::actuator_state(seq, &snap));
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, LiveInner> {
        self.inner.lock().expect("session lock poisoned")
    }
}

/// Shared service state.
pub struct AppState {
    runtime: Runtime,
    backend: BackendKind,
    token: String,
    metrics: MetricsConfig,
    sessions: RwLock<HashMap<String, Arc<LiveSession>>>,
    shutdown: watch::Sender<bool>,
}

impl AppState {
    pub fn new(runtime: Runtime, backend: BackendKind, token: impl Into<String>, metrics: MetricsConfig) -> Arc<Self> {
        Arc::new(AppState {
            runtime,
            backend,
            token: token.into(),
            metrics,
            sessions: RwLock::default(),
            shutdown: watch::channel(false).0,
        })
    }

    fn get(&self, id: &str) -> ApiResult<Arc<LiveSession>> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    /// Seals every open session and closes push channels. Returns the number
    /// of sessions sealed.
    pub fn seal_all(&self) -> usize {
        let live: Vec<_> = self.sessions.read().expect("session table poisoned").values().cloned().collect();
        let mut sealed = 0;
        for s in live {
            let mut inner = s.lock();
            if inner.session.state() == crate::session::SessionState::Ended {
                continue;
            }
            let ts = s.now(&inner);
            match inner.session.end(ts) {
                Ok(footer) => {
                    s.publish_records(&mut inner, &[footer]);
                    sealed += 1;
                }
                Err(e) => tracing::error!(session = inner.session.id(), error = %e, "failed to seal session"),
            }
        }
        self.shutdown.send_replace(true);
        sealed
    }
}

/// Runs a blocking closure on the blocking pool.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string())))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ")
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

/// Accepts `Authorization: Bearer` or `?token=` (browsers cannot set headers
/// on WebSocket upgrades).
async fn require_token(State(state): State<Arc<AppState>>, Query(q): Query<TokenQuery>, req: Request, next: Next) -> Response {
    let presented = bearer(req.headers()).map(str::to_string).or(q.token);
    if presented.as_deref() != Some(state.token.as_str()) {
        return ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or wrong bearer token").into_response();
    }
    next.run(req).await
}

/// CORS policy: any origin, or exactly `origin`.
pub fn cors(origin: Option<&str>) -> Result<CorsLayer, String> {
    let allow = match origin {
        None | Some("*") => AllowOrigin::from(Any),
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).map_err(|e| format!("bad CORS origin `{o}`: {e}"))?),
    };
    Ok(CorsLayer::new().allow_origin(allow).allow_methods(Any).allow_headers(Any))
}

pub fn router(state: Arc<AppState>, cors: CorsLayer) -> Router {
    let protected = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/events", post(post_event))
        .route("/sessions/{id}/stream", get(stream))
        .route("/sessions/{id}/ratings", post(post_rating))
        .route("/sessions/{id}/metrics", get(session_metrics))
        .route("/sessions/{id}/end", post(end_session))
        .route("/participants/{id}/memory", get(participant_memory))
        .route_layer(middleware::from_fn_with_state(Arc::clone(&state), require_token));
    Router::new().route("/health", get(health)).merge(protected).layer(cors).with_state(state)
}

/// Serves until `shutdown` resolves, then seals open sessions and drains.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    cors: CorsLayer,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(Arc::clone(&state), cors);
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            let sealed = tokio::task::spawn_blocking(move || state.seal_all()).await.unwrap_or(0);
            tracing::info!(sealed, "shutting down");
        })
        .await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let sessions = state.sessions.read().expect("session table poisoned").len();
    Json(json!({ "status": "ok", "backend": state.backend.as_str(), "sessions": sessions }))
}

fn json_body<T: serde::de::DeserializeOwned>(body: &[u8], status: StatusCode, code: &'static str) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(status, code, e.to_string()))
}

fn raw_json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let mut v: Value = json_body(&body, StatusCode::BAD_REQUEST, "INVALID_CONFIG")?;
    if let Some(obj) = v.as_object_mut() {
        obj.entry("backend").or_insert_with(|| json!(state.backend.as_str()));
    }
    let cfg: SessionConfig =
        serde_json::from_value(v).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "INVALID_CONFIG", e.to_string()))?;
    if cfg.backend != state.backend {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "INVALID_CONFIG",
            format!("this service mediates with `{}`, not `{}`", state.backend.as_str(), cfg.backend.as_str()),
        ));
    }
    cfg.validate()?;
    let id = blocking(move || {
        let mut table = state.sessions.write().expect("session table poisoned");
        let id = cfg.session_id();
        if table.contains_key(&id) {
            return Err(ApiError::new(StatusCode::CONFLICT, "SESSION_EXISTS", format!("session `{id}` already exists")));
        }
        let session = Session::start(cfg, &state.runtime)?;
        let (tx, _) = broadcast::channel(CHANNEL_CAPACITY);
        let live = LiveSession { inner: Mutex::new(LiveInner { session, history: Vec::new() }), tx, opened: Instant::now() };
        {
            let mut inner = live.lock();
            let header = inner.session.log().records().to_vec();
            live.publish_records(&mut inner, &header);
        }
        tracing::info!(session = %id, "session started");
        table.insert(id.clone(), Arc::new(live));
        Ok(id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response())
}

/// A cue as posted by a client; `ts` defaults to the session's clock.
#[derive(Deserialize)]
struct EventBody {
    #[serde(default)]
    ts: Option<Timestamp>,
    #[serde(flatten)]
    payload: CuePayload,
}

async fn post_event(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let live = state.get(&id)?;
    let ev: EventBody = json_body(&body, StatusCode::UNPROCESSABLE_ENTITY, "INVALID_CUE")?;
    blocking(move || {
        let mut inner = live.lock();
        let ts = ev.ts.unwrap_or_else(|| live.now(&inner));
        let out = inner.session.ingest(CueInput { ts, payload: ev.payload })?;
        live.publish_records(&mut inner, &out.records);
        let mut body = envelope::records_array(&out.records);
        if let Some(e) = &out.mediation_error {
            let seq = inner.session.log().len() as u64 - 1;
            live.publish(&mut inner, Envelope::error(seq, "MEDIATION_FAILED", &e.to_string()));
            body = format!(r#"{{"records":{body},"mediation_error":{}}}"#, json!(e.to_string()));
        } else {
            body = format!(r#"{{"records":{body}}}"#);
        }
        Ok(raw_json(StatusCode::OK, body))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RatingBody {
    plan_id: String,
    verdict: Verdict,
}

async fn post_rating(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let live = state.get(&id)?;
    let rating: RatingBody = json_body(&body, StatusCode::UNPROCESSABLE_ENTITY, "INVALID_RATING")?;
    blocking(move || {
        let mut inner = live.lock();
        let ts = live.now(&inner);
        let record = inner.session.record_rating(&rating.plan_id, rating.verdict, ts)?;
        live.publish_records(&mut inner, std::slice::from_ref(&record));
        Ok(raw_json(StatusCode::OK, envelope::line(&record)))
    })
    .await
}

async fn end_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let live = state.get(&id)?;
    blocking(move || {
        let mut inner = live.lock();
        let ts = live.now(&inner);
        let footer = inner.session.end(ts)?;
        live.publish_records(&mut inner, std::slice::from_ref(&footer));
        tracing::info!(session = inner.session.id(), "session ended");
        Ok(raw_json(StatusCode::OK, envelope::line(&footer)))
    })
    .await
}

/// Partial report over every session of this session's participant.
async fn session_metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let participant = state.get(&id)?.lock().session.config().participant.clone();
    let logs: Vec<SessionLog> = {
        let table = state.sessions.read().expect("session table poisoned");
        table.values().map(|s| s.lock()).filter(|i| i.session.config().participant == participant).map(|i| i.session.log().clone()).collect()
    };
    let report = compute_partial_report(&logs, &state.metrics)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "METRICS_ERROR", e.to_string()))?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

async fn participant_memory(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let mem = state.runtime.memory.participant(&id).map_err(|e| match e {
        StoreError::InvalidParticipant(_) => ApiError::new(StatusCode::BAD_REQUEST, "INVALID_PARTICIPANT", e.to_string()),
        _ => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "STORE_UNAVAILABLE", e.to_string()),
    })?;
    let entries = serde_json::to_value(mem.lock().expect("memory poisoned").entries()).expect("entries serialize");
    Ok(Json(json!({ "participant": id, "entries": entries })))
}

#[derive(Deserialize)]
struct StreamQuery {
    #[serde(default)]
    from_seq: u64,
}

async fn stream(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let live = state.get(&id)?;
    // Subscribing under the lock makes backlog and live tail contiguous.
    let (backlog, rx) = {
        let inner = live.lock();
        let backlog: Vec<Envelope> = inner.history.iter().filter(|e| e.seq >= q.from_seq).cloned().collect();
        (backlog, live.tx.subscribe())
    };
    let shutdown = state.shutdown.subscribe();
    Ok(ws.on_upgrade(move |socket| push(socket, backlog, rx, q.from_seq, shutdown)))
}

async fn push(
    mut socket: WebSocket,
    backlog: Vec<Envelope>,
    mut rx: broadcast::Receiver<Envelope>,
    from_seq: u64,
    mut shutdown: watch::Receiver<bool>,
) {
    for env in backlog {
        if socket.send(Message::Text(env.text().into())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(env) if env.seq < from_seq => {}
                Ok(env) => {
                    if socket.send(Message::Text(env.text().into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let env = Envelope::error(0, "LAGGED", &format!("subscriber fell {n} envelopes behind; reconnect with from_seq"));
                    let _ = socket.send(Message::Text(env.text().into())).await;
                    break;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
            _ = async { drop(shutdown.wait_for(|down| *down).await) } => {
                // Deliver whatever the seal published before closing.
                while let Ok(env) = rx.try_recv() {
                    if env.seq >= from_seq {
                        let _ = socket.send(Message::Text(env.text().into())).await;
                    }
                }
                break;
            }
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
