//! The mediation response contract and its validator.
//!
//! Every plan, whichever backend produced it, passes through
//! [`validate_response_value`] before it can reach an actuator.

use std::fmt;

use serde::Serialize;
use serde_json::{Map, Value};

use super::intervention_class;
use crate::model::{command_from_value, ActuatorCommand, AffectState, Confidence, FieldError, InterventionClass};

pub const RATIONALE_MAX: usize = 500;

/// Published JSON schema for the response object.
pub const RESPONSE_SCHEMA: &str = include_str!("../../schema/mediation-response.schema.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MediationResponse {
    pub state: AffectState,
    pub confidence: Confidence,
    pub rationale: String,
    pub intervention_class: Option<InterventionClass>,
    pub commands: Vec<ActuatorCommand>,
}

impl MediationResponse {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("response serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractViolation {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for ContractViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CONTRACT_VIOLATION at {}: {}", self.path, self.reason)
    }
}

impl std::error::Error for ContractViolation {}

impl From<FieldError> for ContractViolation {
    fn from(e: FieldError) -> Self {
        ContractViolation { path: if e.path.is_empty() { "$".into() } else { e.path }, reason: e.reason }
    }
}

fn violation(path: &str, reason: impl Into<String>) -> ContractViolation {
    ContractViolation { path: path.to_string(), reason: reason.into() }
}

/// Finds every balanced top-level `{...}` span that parses as a JSON object.
fn object_candidates(text: &str) -> Vec<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    if let Ok(Value::Object(m)) = serde_json::from_str::<Value>(&text[start..=i]) {
                        out.push(m);
                    }
                }
            }
            _ => {}
        }
    }
    out
}

/// Extracts the single structured object from backend text, tolerating prose
/// and code fences around it, then validates it.
pub fn parse_response(text: &str) -> Result<MediationResponse, ContractViolation> {
    let mut candidates = object_candidates(text);
    match candidates.len() {
        0 => Err(violation("$", "no JSON object found")),
        1 => validate_response_value(&Value::Object(candidates.remove(0))),
        n => Err(violation("$", format!("expected one JSON object, found {n}"))),
    }
}

const KEYS: [&str; 5] = ["state", "confidence", "rationale", "intervention_class", "commands"];

pub fn validate_response_value(v: &Value) -> Result<MediationResponse, ContractViolation> {
    let obj = v.as_object().ok_or_else(|| violation("$", "expected object"))?;
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(violation(k, "unexpected field"));
    }

    let state = match obj.get("state") {
        None => return Err(violation("state", "missing field")),
        Some(Value::String(s)) => AffectState::parse(s).ok_or_else(|| violation("state", format!("unknown state `{s}`")))?,
        Some(other) => return Err(violation("state", format!("expected string, got {other}"))),
    };

    let confidence = match obj.get("confidence") {
        None => return Err(violation("confidence", "missing field")),
        Some(Value::Number(n)) => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            Confidence::from_f64(x).ok_or_else(|| violation("confidence", format!("{x} outside [0,1]")))?
        }
        Some(other) => return Err(violation("confidence", format!("expected number, got {other}"))),
    };

    let rationale = match obj.get("rationale") {
        None => return Err(violation("rationale", "missing field")),
        Some(Value::String(s)) if s.trim().is_empty() => return Err(violation("rationale", "must not be empty")),
        Some(Value::String(s)) if s.chars().count() > RATIONALE_MAX => {
            return Err(violation("rationale", format!("longer than {RATIONALE_MAX} characters")))
        }
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(violation("rationale", format!("expected string, got {other}"))),
    };

    let expected_class = intervention_class(state);
    let class = match obj.get("intervention_class") {
        None => return Err(violation("intervention_class", "missing field")),
        Some(Value::Null) => None,
        Some(Value::String(s)) => Some(
            InterventionClass::parse(s)
                .ok_or_else(|| violation("intervention_class", format!("unknown intervention class `{s}`")))?,
        ),
        Some(other) => return Err(violation("intervention_class", format!("expected string or null, got {other}"))),
    };
    if class != expected_class {
        let want = expected_class.map_or("null".to_string(), |c| c.to_string());
        return Err(violation("intervention_class", format!("state `{state}` requires `{want}`")));
    }

    let commands = match obj.get("commands") {
        None => return Err(violation("commands", "missing field")),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, c)| command_from_value(c).map_err(|e| ContractViolation::from(e.under(&format!("[{i}]")).under("commands"))))
            .collect::<Result<Vec<_>, _>>()?,
        Some(other) => return Err(violation("commands", format!("expected array, got {other}"))),
    };
    match (state, commands.is_empty()) {
        (AffectState::Neutral, false) => return Err(violation("commands", "neutral state must not carry commands")),
        (s, true) if s != AffectState::Neutral => return Err(violation("commands", "non-neutral state needs at least one command")),
        _ => {}
    }

    Ok(MediationResponse { state, confidence, rationale, intervention_class: class, commands })
}
