//! Starts the service on an ephemeral port, opens a session, subscribes to
//! its push channel, posts a stress utterance, rates the plan and ends the
//! session. Each pushed envelope is printed as it arrives.

use std::sync::Arc;

use futures::StreamExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;
use workpod::api::{self, AppState};
use workpod::metrics::MetricsConfig;
use workpod::model::BackendKind;
use workpod::session::Runtime;

const TOKEN: &str = "example-token";

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let state = AppState::new(Runtime::default(), BackendKind::Oracle, TOKEN, MetricsConfig::default());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(api::serve(listener, Arc::clone(&state), api::cors(None)?, async {
        let _ = stopped.await;
    }));

    let base = format!("http://{addr}");
    let http = reqwest::Client::new();
    let created: Value = http
        .post(format!("{base}/sessions"))
        .bearer_auth(TOKEN)
        .json(&json!({ "participant": "p01", "session_index": 1 }))
        .send()
        .await?
        .json()
        .await?;
    let id = created["session_id"].as_str().ok_or("no session id")?.to_string();
    println!("session {id}");

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{id}/stream?from_seq=0&token={TOKEN}")).await?;
    let printer = tokio::spawn(async move {
        while let Some(Ok(Message::Text(t))) = ws.next().await {
            let v: Value = serde_json::from_str(&t).unwrap_or_default();
            println!("push  seq={} kind={}", v["seq"], v["kind"]);
        }
    });

    let out: Value = http
        .post(format!("{base}/sessions/{id}/events"))
        .bearer_auth(TOKEN)
        .json(&json!({ "ts": 1000, "channel": "utterance", "text": "This task is stressing me out." }))
        .send()
        .await?
        .json()
        .await?;
    let plan = out["records"]
        .as_array()
        .and_then(|rs| rs.iter().find(|r| r["stream"] == "actuation"))
        .map(|r| r["body"]["plan"]["id"].as_str().unwrap_or_default().to_string())
        .ok_or("no adaptation")?;
    println!("posted utterance; plan {plan}");

    let rating = http
        .post(format!("{base}/sessions/{id}/ratings"))
        .bearer_auth(TOKEN)
        .json(&json!({ "plan_id": plan, "verdict": "helpful" }))
        .send()
        .await?;
    println!("rating -> {}", rating.status());
    let end = http.post(format!("{base}/sessions/{id}/end")).bearer_auth(TOKEN).send().await?;
    println!("end -> {}", end.status());

    let memory: Value = http.get(format!("{base}/participants/p01/memory")).bearer_auth(TOKEN).send().await?.json().await?;
    println!("memory entries: {}", memory["entries"].as_array().map_or(0, Vec::len));

    let _ = stop.send(());
    server.await??;
    printer.await?;
    Ok(())
}
