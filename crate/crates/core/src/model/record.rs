//! Canonical line format for log records.
//!
//! One record is one line: `{"seq":N,"stream":"...","body":{...}}`. Body field
//! order follows the struct declarations in [`super::types`]; PROTOCOL.md lists
//! it explicitly. Confidence and outcome scores always carry three decimals, so
//! no floating-point formatting choice leaks into the bytes.

use serde_json::{Map, Value};
use thiserror::Error;

use super::types::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Session,
    Cue,
    Inference,
    Actuation,
    Evaluation,
}

impl Stream {
    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Session => "session",
            Stream::Cue => "cue",
            Stream::Inference => "inference",
            Stream::Actuation => "actuation",
            Stream::Evaluation => "evaluation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "session" => Stream::Session,
            "cue" => Stream::Cue,
            "inference" => Stream::Inference,
            "actuation" => Stream::Actuation,
            "evaluation" => Stream::Evaluation,
            _ => return None,
        })
    }

    /// Prefix of ids minted for records of this stream.
    pub fn id_prefix(self) -> &'static str {
        match self {
            Stream::Session => "session",
            Stream::Cue => "cue",
            Stream::Inference => "inf",
            Stream::Actuation => "act",
            Stream::Evaluation => "eval",
        }
    }
}

pub fn record_id(stream: Stream, seq: u64) -> String {
    format!("{}-{seq}", stream.id_prefix())
}

pub fn plan_id(seq: u64) -> String {
    format!("plan-{seq}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordBody {
    Session(SessionMarker),
    Cue(CueEvent),
    Inference(AffectInference),
    Actuation(ActuationRecord),
    Evaluation(EvaluationEvent),
}

impl RecordBody {
    pub fn stream(&self) -> Stream {
        match self {
            RecordBody::Session(_) => Stream::Session,
            RecordBody::Cue(_) => Stream::Cue,
            RecordBody::Inference(_) => Stream::Inference,
            RecordBody::Actuation(_) => Stream::Actuation,
            RecordBody::Evaluation(_) => Stream::Evaluation,
        }
    }

    pub fn ts(&self) -> Timestamp {
        match self {
            RecordBody::Session(b) => b.ts,
            RecordBody::Cue(b) => b.ts,
            RecordBody::Inference(b) => b.ts,
            RecordBody::Actuation(b) => b.ts,
            RecordBody::Evaluation(b) => b.ts,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            RecordBody::Session(b) => &b.id,
            RecordBody::Cue(b) => &b.id,
            RecordBody::Inference(b) => &b.id,
            RecordBody::Actuation(b) => &b.id,
            RecordBody::Evaluation(b) => &b.id,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            RecordBody::Session(b) => serde_json::to_value(b),
            RecordBody::Cue(b) => serde_json::to_value(b),
            RecordBody::Inference(b) => serde_json::to_value(b),
            RecordBody::Actuation(b) => serde_json::to_value(b),
            RecordBody::Evaluation(b) => serde_json::to_value(b),
        };
        v.expect("record bodies serialize")
    }

    pub(crate) fn to_json(&self) -> String {
        let s = match self {
            RecordBody::Session(b) => serde_json::to_string(b),
            RecordBody::Cue(b) => serde_json::to_string(b),
            RecordBody::Inference(b) => serde_json::to_string(b),
            RecordBody::Actuation(b) => serde_json::to_string(b),
            RecordBody::Evaluation(b) => serde_json::to_string(b),
        };
        s.expect("record bodies serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub seq: u64,
    pub body: RecordBody,
}

impl LogRecord {
    pub fn new(seq: u64, body: RecordBody) -> Self {
        LogRecord { seq, body }
    }

    pub fn stream(&self) -> Stream {
        self.body.stream()
    }

    pub fn ts(&self) -> Timestamp {
        self.body.ts()
    }

    /// Checks every invariant that can be decided from the record alone.
    pub fn validate(&self) -> Result<(), String> {
        let stream = self.stream();
        let expected = record_id(stream, self.seq);
        if self.body.id() != expected {
            return Err(format!("id `{}` does not match seq (expected `{expected}`)", self.body.id()));
        }
        match &self.body {
            RecordBody::Session(m) => {
                if let Marker::Header { session_index: 0, .. } = m.kind {
                    return Err("session_index must be >= 1".into());
                }
            }
            RecordBody::Cue(c) => c.payload.validate()?,
            RecordBody::Inference(i) => {
                if i.source_cue_ids.is_empty() {
                    return Err("source_cue_ids must be non-empty".into());
                }
            }
            RecordBody::Actuation(a) => {
                if a.plan.id != plan_id(self.seq) {
                    return Err(format!("plan id `{}` does not match seq", a.plan.id));
                }
                if a.plan.commands.is_empty() {
                    return Err("plan commands must be non-empty".into());
                }
                if a.plan.ts > a.ts {
                    return Err("plan ts after actuation ts".into());
                }
                for (i, c) in a.plan.commands.iter().enumerate() {
                    c.validate().map_err(|e| format!("plan.commands[{i}].{e}"))?;
                }
            }
            RecordBody::Evaluation(_) => {}
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("INVALID_RECORD: {0}")]
    InvalidRecord(String),
    #[error("PARSE_ERROR at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("SCHEMA_ERROR: {0}")]
    Schema(String),
}

/// Serializes one record as a canonical line (without trailing newline).
pub fn canonical_serialize(record: &LogRecord) -> Result<String, CodecError> {
    record.validate().map_err(CodecError::InvalidRecord)?;
    Ok(format!(
        r#"{{"seq":{},"stream":"{}","body":{}}}"#,
        record.seq,
        record.stream().as_str(),
        record.body.to_json()
    ))
}

fn byte_offset(input: &[u8], line: usize, column: usize) -> usize {
    let mut current = 1;
    let mut start = 0;
    for (i, b) in input.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    (start + column.saturating_sub(1)).min(input.len())
}

/// Returns the path of the first key present in `input` but not in `canonical`.
pub(crate) fn first_unknown_field(input: &Value, canonical: &Value, path: &str) -> Option<String> {
    match (input, canonical) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get(k) {
                    None => return Some(p),
                    Some(cv) => {
                        if let Some(found) = first_unknown_field(v, cv, &p) {
                            return Some(found);
                        }
                    }
                }
            }
            None
        }
        (Value::Array(a), Value::Array(b)) => a
            .iter()
            .zip(b)
            .enumerate()
            .find_map(|(i, (x, y))| first_unknown_field(x, y, &format!("{path}[{i}]"))),
        _ => None,
    }
}

fn body_from_value(stream: Stream, v: Value) -> Result<RecordBody, serde_json::Error> {
    Ok(match stream {
        Stream::Session => RecordBody::Session(serde_json::from_value(v)?),
        Stream::Cue => RecordBody::Cue(serde_json::from_value(v)?),
        Stream::Inference => RecordBody::Inference(serde_json::from_value(v)?),
        Stream::Actuation => RecordBody::Actuation(serde_json::from_value(v)?),
        Stream::Evaluation => RecordBody::Evaluation(serde_json::from_value(v)?),
    })
}

fn take_object(v: Value, what: &str) -> Result<Map<String, Value>, CodecError> {
    match v {
        Value::Object(m) => Ok(m),
        other => Err(CodecError::Schema(format!("{what}: expected object, got {other}"))),
    }
}

/// Parses one line (a trailing newline is tolerated).
pub fn parse_record(line: &[u8]) -> Result<LogRecord, CodecError> {
    let trimmed = line.strip_suffix(b"\n").unwrap_or(line);
    let value: Value = serde_json::from_slice(trimmed).map_err(|e| CodecError::Parse {
        offset: byte_offset(trimmed, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let original = value.clone();
    let mut obj = take_object(value, "record")?;
    if let Some(k) = obj.keys().find(|k| !matches!(k.as_str(), "seq" | "stream" | "body")) {
        return Err(CodecError::Schema(format!("unexpected field `{k}`")));
    }
    let seq = obj
        .get("seq")
        .and_then(Value::as_u64)
        .ok_or_else(|| CodecError::Schema("seq: expected non-negative integer".into()))?;
    let stream_name = obj
        .get("stream")
        .and_then(Value::as_str)
        .ok_or_else(|| CodecError::Schema("stream: expected string".into()))?;
    let stream = Stream::parse(stream_name).ok_or_else(|| CodecError::Schema(format!("unknown stream `{stream_name}`")))?;
    let body = obj.remove("body").ok_or_else(|| CodecError::Schema("body: missing".into()))?;
    let body = body_from_value(stream, body).map_err(|e| CodecError::Schema(format!("body: {e}")))?;
    let record = LogRecord::new(seq, body);
    record.validate().map_err(CodecError::Schema)?;

    let canonical = serde_json::json!({
        "seq": seq,
        "stream": stream.as_str(),
        "body": record.body.to_value(),
    });
    if let Some(path) = first_unknown_field(&original, &canonical, "") {
        return Err(CodecError::Schema(format!("unexpected field `{path}`")));
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rating(seq: u64) -> LogRecord {
        LogRecord::new(
            seq,
            RecordBody::Evaluation(EvaluationEvent {
                id: record_id(Stream::Evaluation, seq),
                ts: Timestamp(905_000),
                kind: Evaluation::Rating { plan_id: "plan-7".into(), verdict: Verdict::Helpful },
            }),
        )
    }

    #[test]
    fn rating_line_is_exact() {
        let line = canonical_serialize(&rating(12)).unwrap();
        assert_eq!(
            line,
            r#"{"seq":12,"stream":"evaluation","body":{"id":"eval-12","ts":905000,"kind":"rating","plan_id":"plan-7","verdict":"helpful"}}"#
        );
    }

    #[test]
    fn inference_confidence_fixed_precision() {
        let rec = LogRecord::new(
            4,
            RecordBody::Inference(AffectInference {
                id: "inf-4".into(),
                ts: Timestamp(10),
                state: AffectState::Drowsy,
                confidence: Confidence::from_f64(0.5).unwrap(),
                rationale: "r".into(),
                source_cue_ids: vec!["cue-3".into()],
                backend: InferenceSource::Oracle,
            }),
        );
        let line = canonical_serialize(&rec).unwrap();
        assert!(line.contains(r#""confidence":0.500"#), "{line}");
        assert_eq!(parse_record(line.as_bytes()).unwrap(), rec);
    }

    #[test]
    fn round_trip_rating() {
        let rec = rating(3);
        let line = canonical_serialize(&rec).unwrap();
        assert_eq!(parse_record(line.as_bytes()).unwrap(), rec);
        assert_eq!(parse_record(format!("{line}\n").as_bytes()).unwrap(), rec);
    }

    #[test]
    fn unknown_stream_is_schema_error() {
        let line = br#"{"seq":0,"stream":"video","body":{}}"#;
        match parse_record(line) {
            Err(CodecError::Schema(msg)) => assert!(msg.contains("video")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_line_is_parse_error() {
        let line = canonical_serialize(&rating(3)).unwrap();
        let cut = &line.as_bytes()[..line.len() - 10];
        match parse_record(cut) {
            Err(CodecError::Parse { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extra_field_rejected() {
        let line = canonical_serialize(&rating(3)).unwrap().replace(r#""verdict""#, r#""extra":1,"verdict""#);
        assert!(matches!(parse_record(line.as_bytes()), Err(CodecError::Schema(_))));
    }

    #[test]
    fn mismatched_id_rejected() {
        let line = canonical_serialize(&rating(3)).unwrap().replace("eval-3", "eval-4");
        assert!(matches!(parse_record(line.as_bytes()), Err(CodecError::Schema(_))));
    }

    #[test]
    fn invalid_record_not_serialized() {
        let rec = LogRecord::new(
            0,
            RecordBody::Cue(CueEvent {
                id: "cue-0".into(),
                ts: Timestamp(0),
                payload: CuePayload::SelfReport { kind: ReportKind::Focus, value: 9 },
            }),
        );
        assert!(matches!(canonical_serialize(&rec), Err(CodecError::InvalidRecord(_))));
    }
}
