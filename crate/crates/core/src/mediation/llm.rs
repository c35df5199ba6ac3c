//! Remote chat-completion backends and the record/replay fixture layer.
//!
//! The wire shape is the common `POST {base_url}/chat/completions` contract
//! (model + messages in, `choices[0].message.content` out), so any compatible
//! provider works. Fixtures are keyed by the SHA-256 of the exact request body.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const LLM_KEY_ENV: &str = "WORKPOD_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage { role: role.to_string(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: u8,
    pub response_format: ResponseFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResponseFormat {
    #[serde(rename = "type")]
    pub kind: &'static str,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest { model: model.into(), messages, temperature: 0, response_format: ResponseFormat { kind: "json_object" } }
    }

    pub fn body(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    /// Fixture key: hex SHA-256 of the request body.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.body().as_bytes()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("BACKEND_TIMEOUT after {0} ms")]
    Timeout(u64),
    #[error("BACKEND_UNAVAILABLE: {0}")]
    Unavailable(String),
}

/// One chat-completion round trip. Returns the raw response body.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest, timeout: Duration) -> Result<String, BackendError>;
}

/// Pulls `choices[0].message.content` out of a response body. Bodies that do
/// not have that shape are returned whole, so the contract validator sees them.
pub fn message_content(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.pointer("/choices/0/message/content").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.to_string())
}

/// Wraps content in a minimal chat-completion response body.
pub fn completion_body(content: &str) -> String {
    serde_json::json!({
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

pub struct HttpChatBackend {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        HttpChatBackend { base_url: base_url.into(), api_key: api_key.into(), agent: ureq::Agent::new_with_defaults() }
    }

    /// Reads the key from `WORKPOD_LLM_KEY`.
    pub fn from_env(base_url: impl Into<String>) -> Result<Self, BackendError> {
        let key = std::env::var(LLM_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| BackendError::Unavailable(format!("{LLM_KEY_ENV} is not set")))?;
        Ok(HttpChatBackend::new(base_url, key))
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, request: &ChatRequest, timeout: Duration) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let result = self
            .agent
            .post(&url)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("Authorization", format!("Bearer {}", self.api_key))
            .content_type("application/json")
            .send(request.body())
            .and_then(|resp| resp.into_body().read_to_string());
        result.map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout(timeout.as_millis() as u64),
            other => BackendError::Unavailable(other.to_string()),
        })
    }
}

/// Serves responses from `{dir}/{request-hash}.json`. With an inner backend,
/// misses are forwarded and the response is written back as a new fixture.
pub struct FixtureBackend {
    dir: PathBuf,
    record_through: Option<Box<dyn ChatBackend>>,
}

impl FixtureBackend {
    pub fn replay(dir: impl AsRef<Path>) -> Self {
        FixtureBackend { dir: dir.as_ref().to_path_buf(), record_through: None }
    }

    pub fn recording(dir: impl AsRef<Path>, inner: Box<dyn ChatBackend>) -> Self {
        FixtureBackend { dir: dir.as_ref().to_path_buf(), record_through: Some(inner) }
    }

    pub fn path_for(&self, request: &ChatRequest) -> PathBuf {
        self.dir.join(format!("{}.json", request.hash()))
    }
}

impl ChatBackend for FixtureBackend {
    fn complete(&self, request: &ChatRequest, timeout: Duration) -> Result<String, BackendError> {
        let path = self.path_for(request);
        if let Ok(body) = fs::read_to_string(&path) {
            return Ok(body);
        }
        let Some(inner) = &self.record_through else {
            return Err(BackendError::Unavailable(format!("no fixture {}", path.display())));
        };
        let body = inner.complete(request, timeout)?;
        fs::create_dir_all(&self.dir)
            .and_then(|_| fs::write(&path, &body))
            .map_err(|e| BackendError::Unavailable(format!("writing fixture {}: {e}", path.display())))?;
        Ok(body)
    }
}

/// Offline stand-in for a remote model. Reads the trigger line of the prompt
/// and answers from the workflow table, wrapped in a sentence of prose the
/// way chat models often do. Used to capture the bundled fixtures.
#[derive(Debug, Clone, Default)]
pub struct ScriptedChatBackend {
    table: Option<super::WorkflowTable>,
}

impl ScriptedChatBackend {
    pub fn new(table: super::WorkflowTable) -> Self {
        ScriptedChatBackend { table: Some(table) }
    }

    fn state_for(prompt: &str) -> crate::model::AffectState {
        use crate::model::AffectState;
        let trigger = prompt.lines().find(|l| l.starts_with("Trigger:")).unwrap_or("");
        if let Some(hint) = trigger.split("lexicon hint: ").nth(1) {
            return AffectState::parse(hint.trim_end_matches(')')).unwrap_or(AffectState::Neutral);
        }
        if trigger.contains("gaze") {
            AffectState::FocusLoss
        } else if trigger.contains("social") {
            AffectState::Distracted
        } else {
            AffectState::Neutral
        }
    }
}

impl ChatBackend for ScriptedChatBackend {
    fn complete(&self, request: &ChatRequest, _timeout: Duration) -> Result<String, BackendError> {
        let user = request.messages.iter().rev().find(|m| m.role == "user").map_or("", |m| m.content.as_str());
        let first_user = request.messages.iter().find(|m| m.role == "user").map_or(user, |m| m.content.as_str());
        let state = Self::state_for(first_user);
        let table = self.table.clone().unwrap_or_else(|| super::WorkflowTable::new(Default::default()));
        let (class, commands) = table.plan_for(state).map_or((None, Vec::new()), |(c, cmds)| (Some(c), cmds));
        let body = serde_json::json!({
            "state": state,
            "confidence": 0.85,
            "rationale": format!("cue pattern is consistent with {state}; choosing the matching workflow"),
            "intervention_class": class,
            "commands": commands,
        });
        Ok(completion_body(&format!("Here is the adaptation plan:\n{body}")))
    }
}

impl<F> ChatBackend for F
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest, _timeout: Duration) -> Result<String, BackendError> {
        self(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("m", vec![ChatMessage::new("user", text)])
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        assert_eq!(req("a").hash(), req("a").hash());
        assert_ne!(req("a").hash(), req("b").hash());
        assert_eq!(req("a").hash().len(), 64);
    }

    #[test]
    fn content_extraction() {
        assert_eq!(message_content(&completion_body("{\"x\":1}")), "{\"x\":1}");
        assert_eq!(message_content("plain text"), "plain text");
    }

    #[test]
    fn fixture_record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let inner = |_: &ChatRequest| Ok::<_, BackendError>(completion_body("hello"));
        let rec = FixtureBackend::recording(dir.path(), Box::new(inner));
        let body = rec.complete(&req("q"), Duration::from_millis(10)).unwrap();
        let replay = FixtureBackend::replay(dir.path());
        assert_eq!(replay.complete(&req("q"), Duration::from_millis(10)).unwrap(), body);
        assert!(matches!(replay.complete(&req("other"), Duration::from_millis(10)), Err(BackendError::Unavailable(_))));
    }

    #[test]
    fn scripted_backend_answers_from_trigger_line() {
        let prompt = "Trigger: utterance (lexicon hint: stressed)\nUtterance: \"x\"";
        let r = ChatRequest::new("m", vec![ChatMessage::new("system", "s"), ChatMessage::new("user", prompt)]);
        let body = ScriptedChatBackend::default().complete(&r, Duration::from_millis(1)).unwrap();
        let parsed = super::super::response::parse_response(&message_content(&body)).unwrap();
        assert_eq!(parsed.state, crate::model::AffectState::Stressed);
    }

    #[test]
    fn unreachable_http_backend_is_unavailable() {
        let b = HttpChatBackend::new("http://127.0.0.1:9", "k");
        assert!(b.complete(&req("q"), Duration::from_millis(300)).is_err());
    }
}
