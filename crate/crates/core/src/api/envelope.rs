//! Push-channel envelopes: `{"kind":..,"seq":..,"body":..}`.
//!
//! For log-backed kinds `seq` and `body` are the record's own, byte for byte
//! as in the log line. `actuator_state` and `error` carry the seq of the log
//! record they follow.

use std::sync::Arc;

use serde_json::json;

use crate::actuation::ActuatorSnapshot;
use crate::model::{LogRecord, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeKind {
    Session,
    Cue,
    Inference,
    Actuation,
    Evaluation,
    ActuatorState,
    Error,
}

impl EnvelopeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvelopeKind::Session => "session",
            EnvelopeKind::Cue => "cue",
            EnvelopeKind::Inference => "inference",
            EnvelopeKind::Actuation => "actuation",
            EnvelopeKind::Evaluation => "evaluation",
            EnvelopeKind::ActuatorState => "actuator_state",
            EnvelopeKind::Error => "error",
        }
    }
}

impl From<Stream> for EnvelopeKind {
    fn from(s: Stream) -> Self {
        match s {
            Stream::Session => EnvelopeKind::Session,
            Stream::Cue => EnvelopeKind::Cue,
            Stream::Inference => EnvelopeKind::Inference,
            Stream::Actuation => EnvelopeKind::Actuation,
            Stream::Evaluation => EnvelopeKind::Evaluation,
        }
    }
}

/// A serialized envelope; cloning shares the text.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub kind: EnvelopeKind,
    pub seq: u64,
    text: Arc<str>,
}

impl Envelope {
    fn build(kind: EnvelopeKind, seq: u64, body: &str) -> Self {
        let text = format!(r#"{{"kind":"{}","seq":{seq},"body":{body}}}"#, kind.as_str());
        Envelope { kind, seq, text: text.into() }
    }

    pub fn record(r: &LogRecord) -> Self {
        Envelope::build(r.stream().into(), r.seq, &r.body.to_json())
    }

    pub fn actuator_state(seq: u64, snap: &ActuatorSnapshot) -> Self {
        Envelope::build(EnvelopeKind::ActuatorState, seq, &serde_json::to_string(snap).expect("snapshot serializes"))
    }

    pub fn error(seq: u64, code: &str, message: &str) -> Self {
        Envelope::build(EnvelopeKind::Error, seq, &json!({ "code": code, "message": message }).to_string())
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// The canonical log line of `r`.
pub(crate) fn line(r: &LogRecord) -> String {
    crate::model::canonical_serialize(r).expect("appended records are valid")
}

/// A JSON array of canonical log lines.
pub(crate) fn records_array(records: &[LogRecord]) -> String {
    let lines: Vec<String> = records.iter().map(line).collect();
    format!("[{}]", lines.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CueEvent, CuePayload, Posture, RecordBody, Timestamp};

    #[test]
    fn record_envelope_reuses_the_log_body() {
        let r = LogRecord::new(
            3,
            RecordBody::Cue(CueEvent {
                id: "cue-3".into(),
                ts: Timestamp(1500),
                payload: CuePayload::Behavior { gaze_on_screen: true, posture: Posture::Upright },
            }),
        );
        let env = Envelope::record(&r);
        let v: serde_json::Value = serde_json::from_str(env.text()).unwrap();
        let logged: serde_json::Value = serde_json::from_str(&line(&r)).unwrap();
        assert_eq!(v["kind"], "cue");
        assert_eq!(v["seq"], 3);
        assert_eq!(v["body"], logged["body"]);
    }
}
