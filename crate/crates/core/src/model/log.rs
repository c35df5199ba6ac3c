//! Append-only session log.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::record::{canonical_serialize, parse_record, CodecError, LogRecord, RecordBody};
use super::types::*;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogError {
    #[error("SEQ_GAP: expected seq {expected}, got {got}")]
    SeqGap { expected: u64, got: u64 },
    #[error("TIME_REGRESSION: record ts {got} precedes last ts {last}")]
    TimeRegression { last: Timestamp, got: Timestamp },
    #[error("DANGLING_REFERENCE: {field} `{id}` does not resolve to an earlier record")]
    DanglingReference { field: &'static str, id: String },
    #[error("DUPLICATE_RATING: plan `{0}` already rated")]
    DuplicateRating(String),
    #[error("SEALED: log already has a footer")]
    Sealed,
    #[error("line {line}: {source}")]
    Codec {
        line: usize,
        #[source]
        source: CodecError,
    },
}

/// Records plus their canonical lines. Lines are produced once, on append, and
/// never rewritten.
#[derive(Debug, Clone, Default)]
pub struct SessionLog {
    records: Vec<LogRecord>,
    lines: Vec<String>,
    cue_ts: HashMap<String, Timestamp>,
    inference_states: HashMap<String, AffectState>,
    plans: HashSet<String>,
    rated: HashSet<String>,
    sealed: bool,
}

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn last_ts(&self) -> Option<Timestamp> {
        self.records.last().map(LogRecord::ts)
    }

    pub fn cue_ts(&self, id: &str) -> Option<Timestamp> {
        self.cue_ts.get(id).copied()
    }

    pub fn has_plan(&self, plan_id: &str) -> bool {
        self.plans.contains(plan_id)
    }

    pub fn is_rated(&self, plan_id: &str) -> bool {
        self.rated.contains(plan_id)
    }

    /// Appends one record, enforcing density, time order and referential
    /// integrity. Returns the canonical line written.
    pub fn append(&mut self, record: LogRecord) -> Result<&str, LogError> {
        if self.sealed {
            return Err(LogError::Sealed);
        }
        let expected = self.records.len() as u64;
        if record.seq != expected {
            return Err(LogError::SeqGap { expected, got: record.seq });
        }
        if let Some(last) = self.last_ts() {
            if record.ts() < last {
                return Err(LogError::TimeRegression { last, got: record.ts() });
            }
        }
        self.check_references(&record.body)?;
        let line = canonical_serialize(&record).map_err(|source| LogError::Codec { line: expected as usize + 1, source })?;

        match &record.body {
            RecordBody::Cue(c) => {
                self.cue_ts.insert(c.id.clone(), c.ts);
            }
            RecordBody::Inference(i) => {
                self.inference_states.insert(i.id.clone(), i.state);
            }
            RecordBody::Actuation(a) => {
                self.plans.insert(a.plan.id.clone());
            }
            RecordBody::Evaluation(EvaluationEvent { kind: Evaluation::Rating { plan_id, .. }, .. }) => {
                self.rated.insert(plan_id.clone());
            }
            RecordBody::Session(SessionMarker { kind: Marker::Footer { .. }, .. }) => self.sealed = true,
            _ => {}
        }
        self.records.push(record);
        self.lines.push(line);
        Ok(self.lines.last().expect("just pushed"))
    }

    fn check_references(&self, body: &RecordBody) -> Result<(), LogError> {
        match body {
            RecordBody::Inference(i) => {
                for id in &i.source_cue_ids {
                    if !self.cue_ts.contains_key(id) {
                        return Err(LogError::DanglingReference { field: "source_cue_ids", id: id.clone() });
                    }
                }
            }
            RecordBody::Actuation(a) => match self.inference_states.get(&a.plan.inference_id) {
                Some(AffectState::Neutral) | None => {
                    return Err(LogError::DanglingReference { field: "inference_id", id: a.plan.inference_id.clone() })
                }
                Some(_) => {}
            },
            RecordBody::Evaluation(EvaluationEvent { kind: Evaluation::Rating { plan_id, .. }, .. }) => {
                if !self.plans.contains(plan_id) {
                    return Err(LogError::DanglingReference { field: "plan_id", id: plan_id.clone() });
                }
                if self.rated.contains(plan_id) {
                    return Err(LogError::DuplicateRating(plan_id.clone()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Rebuilds a log from line-delimited text, re-checking every invariant.
    pub fn from_text(text: &str) -> Result<Self, LogError> {
        let mut log = SessionLog::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let record = parse_record(line.as_bytes()).map_err(|source| LogError::Codec { line: i + 1, source })?;
            log.append(record)?;
        }
        Ok(log)
    }

    /// The whole log as written to disk: one line per record, `\n` terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.lines.iter().map(|l| l.len() + 1).sum());
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn header(&self) -> Option<(&str, u32)> {
        self.records.iter().find_map(|r| match &r.body {
            RecordBody::Session(SessionMarker { kind: Marker::Header { participant, session_index, .. }, .. }) => {
                Some((participant.as_str(), *session_index))
            }
            _ => None,
        })
    }
}

/// Log file name for a participant's session.
pub fn log_file_name(participant: &str, session_index: u32) -> String {
    format!("{participant}-s{session_index}.log.jsonl")
}
