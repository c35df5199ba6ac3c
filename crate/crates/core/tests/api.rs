//! HTTP and push-channel behavior of the live service, against an in-process
//! server on an ephemeral port.

use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;
use workpod::api::{self, AppState};
use workpod::mediation::memory::MemoryStore;
use workpod::metrics::MetricsConfig;
use workpod::model::BackendKind;
use workpod::session::Runtime;

const TOKEN: &str = "test-token";

struct Server {
    base: String,
    ws: String,
    http: reqwest::Client,
    dir: tempfile::TempDir,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
}

impl Server {
    async fn start() -> Server {
        let dir = tempfile::tempdir().unwrap();
        let rt = Runtime {
            memory: Arc::new(MemoryStore::open(dir.path()).unwrap()),
            log_dir: Some(dir.path().to_path_buf()),
            ..Runtime::default()
        };
        let state = AppState::new(rt, BackendKind::Oracle, TOKEN, MetricsConfig::default());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let handle = tokio::spawn(api::serve(listener, state, api::cors(None).unwrap(), async {
            let _ = stopped.await;
        }));
        Server {
            base: format!("http://{addr}"),
            ws: format!("ws://{addr}"),
            http: reqwest::Client::new(),
            dir,
            stop: Some(stop),
            handle: Some(handle),
        }
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let res = self.http.post(format!("{}{path}", self.base)).bearer_auth(TOKEN).json(&body).send().await.unwrap();
        let status = res.status();
        (status, res.json().await.unwrap_or(Value::Null))
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let res = self.http.get(format!("{}{path}", self.base)).bearer_auth(TOKEN).send().await.unwrap();
        let status = res.status();
        (status, res.json().await.unwrap_or(Value::Null))
    }

    async fn session(&self, index: u32) -> String {
        let (status, body) = self.post("/sessions", json!({ "participant": "p01", "session_index": index })).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }

    async fn event(&self, id: &str, body: Value) -> (StatusCode, Value) {
        self.post(&format!("/sessions/{id}/events"), body).await
    }

    async fn subscribe(&self, id: &str, from_seq: u64) -> Subscriber {
        let url = format!("{}/sessions/{id}/stream?from_seq={from_seq}&token={TOKEN}", self.ws);
        let (ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
        Subscriber(ws)
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    async fn shutdown(&mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.handle.take().unwrap().await.unwrap().unwrap();
    }
}

struct Subscriber(tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>);

impl Subscriber {
    /// Next `n` envelopes; panics if they do not arrive within 5 s.
    async fn take(&mut self, n: usize) -> Vec<Value> {
        let mut out = Vec::new();
        while out.len() < n {
            let msg = tokio::time::timeout(Duration::from_secs(5), self.0.next()).await.expect("envelope in time");
            match msg {
                Some(Ok(Message::Text(t))) => out.push(serde_json::from_str(&t).unwrap()),
                Some(Ok(Message::Close(_))) | None => panic!("channel closed after {} envelopes", out.len()),
                _ => {}
            }
        }
        out
    }

    /// Everything until the server closes the channel.
    async fn drain(&mut self) -> Vec<Value> {
        let mut out = Vec::new();
        while let Ok(Some(Ok(msg))) = tokio::time::timeout(Duration::from_secs(5), self.0.next()).await {
            match msg {
                Message::Text(t) => out.push(serde_json::from_str(&t).unwrap()),
                Message::Close(_) => break,
                _ => {}
            }
        }
        out
    }
}

fn on_screen(ts: u64) -> Value {
    json!({ "ts": ts, "channel": "behavior", "gaze_on_screen": true, "posture": "upright" })
}

fn stress(ts: u64) -> Value {
    json!({ "ts": ts, "channel": "utterance", "text": "This task is stressing me out." })
}

fn seqs(envs: &[Value]) -> Vec<u64> {
    envs.iter().map(|e| e["seq"].as_u64().unwrap()).collect()
}

fn logged(envs: &[Value]) -> Vec<Value> {
    envs.iter().filter(|e| !matches!(e["kind"].as_str(), Some("actuator_state" | "error"))).cloned().collect()
}

#[tokio::test]
async fn health_needs_no_token() {
    let mut s = Server::start().await;
    let v: Value = reqwest::get(format!("{}/health", s.base)).await.unwrap().json().await.unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["backend"], "oracle");
    s.shutdown().await;
}

#[tokio::test]
async fn session_creation_errors() {
    let mut s = Server::start().await;
    let res = s.http.post(format!("{}/sessions", s.base)).json(&json!({"participant":"p01","session_index":1})).send().await.unwrap();
    assert_eq!(res.status(), StatusCode::UNAUTHORIZED);
    let res = s
        .http
        .post(format!("{}/sessions", s.base))
        .bearer_auth("wrong")
        .json(&json!({"participant":"p01","session_index":1}))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::UNAUTHORIZED);

    let (status, body) = s.post("/sessions", json!({ "participant": "p01", "session_index": 0 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "INVALID_CONFIG");
    let (status, _) = s.post("/sessions", json!({ "participant": "p01", "session_index": 1, "backend": "llm" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "backend must match the service");
    let (status, _) = s.post("/sessions", json!({ "participant": "../etc", "session_index": 1 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    assert_eq!(s.session(1).await, "p01-s1");
    let (status, body) = s.post("/sessions", json!({ "participant": "p01", "session_index": 1 })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "SESSION_EXISTS");
    s.shutdown().await;
}

#[tokio::test]
async fn stress_utterance_yields_warm_calm_and_breathing() {
    let mut s = Server::start().await;
    let id = s.session(1).await;
    let (status, body) = s.event(&id, stress(1000)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let records = body["records"].as_array().unwrap();
    let streams: Vec<&str> = records.iter().map(|r| r["stream"].as_str().unwrap()).collect();
    assert_eq!(streams, ["cue", "inference", "actuation"]);
    assert_eq!(records[1]["body"]["state"], "stressed");
    let cmds = records[2]["body"]["plan"]["commands"].as_array().unwrap();
    assert_eq!(cmds[0], json!({"type":"light","brightness_pct":40,"color_temp_k":2700,"ramp_s":120}));
    assert_eq!(cmds[1]["type"], "prompt");
    assert!(cmds[1]["text"].as_str().unwrap().to_lowercase().contains("breath"));
    s.shutdown().await;
}

#[tokio::test]
async fn event_errors() {
    let mut s = Server::start().await;
    let id = s.session(1).await;
    let (status, body) = s.event(&id, on_screen(5000)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["records"].as_array().unwrap().len(), 1);

    let (status, body) = s.event(&id, on_screen(4000)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "TIME_REGRESSION");
    let (status, _) = s.event(&id, json!({ "channel": "behavior", "gaze_on_screen": "yes" })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = s.event(&id, json!({ "ts": 6000, "channel": "self_report", "kind": "stress", "value": 9 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "INVALID_CUE");
    let (status, _) = s.event("p01-s9", on_screen(1)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // Omitted ts takes the session clock, never behind the log.
    let (status, body) = s.event(&id, json!({ "channel": "behavior", "gaze_on_screen": true, "posture": "upright" })).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["records"][0]["body"]["ts"].as_u64().unwrap() >= 5000);

    let (status, _) = s.post(&format!("/sessions/{id}/end"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = s.event(&id, on_screen(99_000)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "SESSION_ENDED");
    let (status, _) = s.post(&format!("/sessions/{id}/end"), json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    s.shutdown().await;
}

#[tokio::test]
async fn ratings() {
    let mut s = Server::start().await;
    let id = s.session(1).await;
    let (_, body) = s.event(&id, stress(1000)).await;
    let plan = body["records"][2]["body"]["plan"]["id"].as_str().unwrap().to_string();

    let path = format!("/sessions/{id}/ratings");
    let (status, rec) = s.post(&path, json!({ "plan_id": plan, "verdict": "helpful" })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rec["stream"], "evaluation");
    assert_eq!(rec["body"]["plan_id"], plan);
    let (status, body) = s.post(&path, json!({ "plan_id": plan, "verdict": "helpful" })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "DUPLICATE_RATING");
    let (status, body) = s.post(&path, json!({ "plan_id": "plan-999", "verdict": "helpful" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "UNKNOWN_PLAN");
    let (status, _) = s.post(&path, json!({ "plan_id": plan, "verdict": "meh" })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, mem) = s.get("/participants/p01/memory").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(mem["entries"].as_array().unwrap().len(), 1);
    assert_eq!(mem["entries"][0]["intervention_class"], "stress_alleviation");
    let (status, _) = s.get("/participants/bad%20id/memory").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, report) = s.get(&format!("/sessions/{id}/metrics")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["plan_count"], 1);
    assert_eq!(report["appropriateness"]["helpful_pct"], 100.0);
    s.shutdown().await;
}

#[tokio::test]
async fn stream_replays_then_follows() {
    let mut s = Server::start().await;
    let id = s.session(1).await;
    for i in 1..=9 {
        s.event(&id, on_screen(i * 1000)).await;
    }
    let mut sub = s.subscribe(&id, 0).await;
    let backlog = sub.take(10).await;
    assert_eq!(seqs(&backlog), (0..10).collect::<Vec<_>>());
    assert_eq!(backlog[0]["kind"], "session");

    s.event(&id, on_screen(10_000)).await;
    let live = sub.take(1).await;
    assert_eq!(live[0]["seq"], 10);
    assert_eq!(live[0]["kind"], "cue");

    let mut resumed = s.subscribe(&id, 7).await;
    assert_eq!(seqs(&resumed.take(4).await), vec![7, 8, 9, 10]);
    s.shutdown().await;
}

#[tokio::test]
async fn envelopes_mirror_the_log() {
    let mut s = Server::start().await;
    let id = s.session(1).await;
    let mut a = s.subscribe(&id, 0).await;
    let mut b = s.subscribe(&id, 0).await;
    s.event(&id, on_screen(1000)).await;
    let (_, body) = s.event(&id, stress(2000)).await;
    let plan = body["records"][2]["body"]["plan"]["id"].as_str().unwrap().to_string();
    s.post(&format!("/sessions/{id}/ratings"), json!({ "plan_id": plan, "verdict": "helpful" })).await;
    s.post(&format!("/sessions/{id}/end"), json!({})).await;
    s.shutdown().await;

    let (ea, eb) = (a.drain().await, b.drain().await);
    assert_eq!(ea, eb, "concurrent subscribers see identical sequences");
    let kinds: Vec<&str> = ea.iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["session", "cue", "cue", "inference", "actuation", "actuator_state", "evaluation", "session"]);
    let state = &ea[5]["body"];
    assert_eq!(state["light_target"], json!({"brightness_pct":40,"color_temp_k":2700}));

    // Log-backed envelopes carry exactly the persisted record bodies.
    let log = std::fs::read_to_string(s.path("p01-s1.log.jsonl")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let env_logged = logged(&ea);
    assert_eq!(env_logged.len(), lines.len());
    for (e, l) in env_logged.iter().zip(&lines) {
        assert_eq!(e["seq"], l["seq"]);
        assert_eq!(e["kind"], l["stream"]);
        assert_eq!(e["body"], l["body"]);
    }
}

#[tokio::test]
async fn shutdown_seals_open_sessions() {
    let mut s = Server::start().await;
    let id = s.session(1).await;
    s.event(&id, on_screen(1000)).await;
    let mut sub = s.subscribe(&id, 0).await;
    sub.take(2).await;
    let path = s.path("p01-s1.log.jsonl");
    let dir = s.dir.path().to_path_buf();
    s.shutdown().await;
    let tail = sub.drain().await;
    assert_eq!(tail.last().unwrap()["kind"], "session", "footer pushed before close");
    let log = std::fs::read_to_string(path).unwrap();
    assert!(log.lines().last().unwrap().contains("\"records\":3"), "{log}");
    assert!(dir.join("p01.memory.jsonl").exists());
}

#[tokio::test]
async fn stream_requires_token_and_session() {
    let mut s = Server::start().await;
    let id = s.session(1).await;
    let url = format!("{}/sessions/{id}/stream", s.ws);
    assert!(tokio_tungstenite::connect_async(url).await.is_err());
    let url = format!("{}/sessions/nope/stream?token={TOKEN}", s.ws);
    assert!(tokio_tungstenite::connect_async(url).await.is_err());
    s.shutdown().await;
}
