//! Per-session event loop: cue in, detection, mediation, actuation, log out.
//!
//! Every record is redacted (when consent is withheld) before it reaches the
//! log, and every log line is written through to disk as soon as it exists.

use std::collections::{HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::actuation::{ActuatorDefaults, ActuatorSnapshot, ActuatorState};
use crate::detect::{Debouncer, DetectorConfig, DistractionDetector, GazeDetector, Lexicon, TriggerCue};
use crate::mediation::memory::{valid_participant_id, CueSignature, MemoryStore, SharedMemory, StoreError};
use crate::mediation::{Mediated, MediationError, Mediator};
use crate::model::{
    log_file_name, plan_id, record_id, ActuatorCommand, AdaptationPlan, AffectInference, BackendKind, CueEvent, CuePayload,
    Evaluation, EvaluationEvent, InterventionClass, LogError, LogRecord, Marker, RecordBody, SessionLog, SessionMarker, Stream,
    Timestamp, Verdict,
};

/// Inferences kept for the remote prompt's recent-history section.
const RECENT_INFERENCES: usize = 5;
pub const DIGEST_PREFIX: &str = "sha256:";
pub const REDACTED_RATIONALE: &str = "[rationale withheld: quoted a redacted utterance]";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("SESSION_ENDED: session `{0}` no longer accepts input")]
    Ended(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("INVALID_CUE: {0}")]
    InvalidCue(String),
    #[error("INVALID_CONFIG: {0}")]
    InvalidConfig(String),
    #[error("UNKNOWN_PLAN: `{0}` is not a plan of this session")]
    UnknownPlan(String),
    #[error("DUPLICATE_RATING: plan `{0}` already rated")]
    DuplicateRating(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("LOG_WRITE: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Consent {
    pub store_raw_utterances: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub participant: String,
    pub session_index: u32,
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub consent: Consent,
    #[serde(default)]
    pub seed: u64,
}

fn default_backend() -> BackendKind {
    BackendKind::Oracle
}

impl SessionConfig {
    pub fn new(participant: impl Into<String>, session_index: u32) -> Self {
        SessionConfig {
            participant: participant.into(),
            session_index,
            backend: BackendKind::Oracle,
            detector: DetectorConfig::default(),
            consent: Consent::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if !valid_participant_id(&self.participant) {
            return Err(SessionError::InvalidConfig(format!(
                "participant `{}` must be 1-64 letters, digits, `-` or `_`",
                self.participant
            )));
        }
        if self.session_index == 0 {
            return Err(SessionError::InvalidConfig("session_index must be >= 1".into()));
        }
        self.detector.validate().map_err(SessionError::InvalidConfig)
    }

    pub fn session_id(&self) -> String {
        format!("{}-s{}", self.participant, self.session_index)
    }
}

/// How derived records are timestamped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ClockMode {
    /// Inference at the cue's ts; reproducible.
    #[default]
    Virtual,
    /// Inference at the cue's ts plus measured processing time.
    Measured,
}

/// Collaborators shared by every session of a process.
#[derive(Debug, Clone)]
pub struct Runtime {
    pub mediator: Arc<Mediator>,
    pub memory: Arc<MemoryStore>,
    pub lexicon: Arc<Lexicon>,
    pub actuators: ActuatorDefaults,
    pub actuator_delay_ms: u64,
    pub clock: ClockMode,
    pub redaction_key: Arc<[u8]>,
    pub log_dir: Option<PathBuf>,
}

impl Default for Runtime {
    fn default() -> Self {
        Runtime {
            mediator: Arc::new(Mediator::default()),
            memory: Arc::new(MemoryStore::in_memory()),
            lexicon: Arc::new(Lexicon::default()),
            actuators: ActuatorDefaults::default(),
            actuator_delay_ms: 0,
            clock: ClockMode::Virtual,
            redaction_key: Arc::from(b"workpod-redaction".as_slice()),
            log_dir: None,
        }
    }
}

/// Keyed one-way digest used in place of withheld utterance text.
pub fn utterance_digest(key: &[u8], text: &str) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(text.as_bytes());
    format!("{DIGEST_PREFIX}{}", hex::encode(mac.finalize().into_bytes()))
}

/// Applies the consent rule to one record. Only utterance text is raw input;
/// every other channel is already derived.
pub fn redact(record: LogRecord, consent: Consent, key: &[u8]) -> LogRecord {
    if consent.store_raw_utterances {
        return record;
    }
    match record.body {
        RecordBody::Cue(CueEvent { id, ts, payload: CuePayload::Utterance { text, hint } }) if !text.starts_with(DIGEST_PREFIX) => {
            let payload = CuePayload::Utterance { text: utterance_digest(key, &text), hint };
            LogRecord::new(record.seq, RecordBody::Cue(CueEvent { id, ts, payload }))
        }
        body => LogRecord::new(record.seq, body),
    }
}

/// A cue as submitted by a caller; the session assigns the id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueInput {
    pub ts: Timestamp,
    #[serde(flatten)]
    pub payload: CuePayload,
}

impl CueInput {
    pub fn new(ts: Timestamp, payload: CuePayload) -> Self {
        CueInput { ts, payload }
    }

    pub fn utterance(ts: Timestamp, text: &str) -> Self {
        CueInput::new(ts, CuePayload::Utterance { text: text.to_string(), hint: None })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestOutcome {
    pub records: Vec<LogRecord>,
    /// Set when mediation failed without a fallback; the trigger stays queued.
    pub mediation_error: Option<MediationError>,
}

#[derive(Debug, Clone)]
struct PlanMemo {
    signature: CueSignature,
    class: InterventionClass,
    commands: Vec<ActuatorCommand>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Running,
    Ended,
}

pub struct Session {
    id: String,
    cfg: SessionConfig,
    rt: Runtime,
    memory: SharedMemory,
    log: SessionLog,
    file: Option<(PathBuf, File)>,
    gaze: GazeDetector,
    distraction: DistractionDetector,
    debouncer: Debouncer,
    queue: VecDeque<TriggerCue>,
    actuators: ActuatorState,
    recent: VecDeque<AffectInference>,
    plans: HashMap<String, PlanMemo>,
    ended: bool,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session").field("id", &self.id).field("records", &self.log.len()).field("ended", &self.ended).finish()
    }
}

impl Session {
    /// Opens the participant's memory, writes the header and resets actuators.
    pub fn start(cfg: SessionConfig, rt: &Runtime) -> Result<Session, SessionError> {
        cfg.validate()?;
        let memory = rt.memory.participant(&cfg.participant)?;
        let file = match &rt.log_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| SessionError::Io(format!("{}: {e}", dir.display())))?;
                let path = dir.join(log_file_name(&cfg.participant, cfg.session_index));
                let f = OpenOptions::new()
                    .write(true)
                    .create_new(true)
                    .open(&path)
                    .map_err(|e| SessionError::Io(format!("{}: {e}", path.display())))?;
                Some((path, f))
            }
            None => None,
        };
        let mut s = Session {
            id: cfg.session_id(),
            gaze: GazeDetector::new(&cfg.detector),
            distraction: DistractionDetector::new(&cfg.detector),
            debouncer: Debouncer::new(&cfg.detector),
            actuators: ActuatorState::new(&rt.actuators),
            rt: rt.clone(),
            memory,
            log: SessionLog::new(),
            file,
            queue: VecDeque::new(),
            recent: VecDeque::new(),
            plans: HashMap::new(),
            ended: false,
            cfg,
        };
        let header = Marker::Header {
            participant: s.cfg.participant.clone(),
            session_index: s.cfg.session_index,
            backend: s.cfg.backend,
            seed: s.cfg.seed,
            store_raw_utterances: s.cfg.consent.store_raw_utterances,
        };
        s.append(RecordBody::Session(SessionMarker { id: record_id(Stream::Session, 0), ts: Timestamp::ZERO, kind: header }))?;
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn state(&self) -> SessionState {
        if self.ended {
            SessionState::Ended
        } else {
            SessionState::Running
        }
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn last_ts(&self) -> Timestamp {
        self.log.last_ts().unwrap_or(Timestamp::ZERO)
    }

    pub fn actuator_snapshot(&self) -> ActuatorSnapshot {
        self.actuators.snapshot()
    }

    pub fn pending_triggers(&self) -> usize {
        self.queue.len()
    }

    pub fn memory(&self) -> &SharedMemory {
        &self.memory
    }

    fn append(&mut self, body: RecordBody) -> Result<LogRecord, SessionError> {
        let record = redact(LogRecord::new(self.log.len() as u64, body), self.cfg.consent, &self.rt.redaction_key);
        let line = self.log.append(record.clone())?;
        if let Some((path, f)) = &mut self.file {
            f.write_all(line.as_bytes())
                .and_then(|_| f.write_all(b"\n"))
                .map_err(|e| SessionError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(record)
    }

    fn ensure_running(&self) -> Result<(), SessionError> {
        if self.ended {
            return Err(SessionError::Ended(self.id.clone()));
        }
        Ok(())
    }

    /// Appends one cue and runs the pipeline. Mediates at most one queued
    /// trigger; the cue is always the first record returned.
    pub fn ingest(&mut self, input: CueInput) -> Result<IngestOutcome, SessionError> {
        let started = Instant::now();
        self.ensure_running()?;
        input.payload.validate().map_err(SessionError::InvalidCue)?;
        let last = self.last_ts();
        if input.ts < last {
            return Err(LogError::TimeRegression { last, got: input.ts }.into());
        }

        let seq = self.log.len() as u64;
        let mut raw_text = None;
        let payload = match input.payload {
            CuePayload::Utterance { text, .. } => {
                let hint = self.rt.lexicon.route(&text);
                raw_text = Some(text.clone());
                CuePayload::Utterance { text, hint }
            }
            other => other,
        };
        let cue = CueEvent { id: record_id(Stream::Cue, seq), ts: input.ts, payload };
        let lexical = match (&cue.payload, &raw_text) {
            (CuePayload::Utterance { hint, .. }, Some(text)) => TriggerCue::lexical(&cue, text, *hint),
            _ => None,
        };
        let behavioral = self.gaze.push(&cue).or_else(|| self.distraction.push(&cue));
        let cue_ts = cue.ts;
        let mut out = IngestOutcome { records: vec![self.append(RecordBody::Cue(cue))?], mediation_error: None };
        self.actuators.step(cue_ts).expect("cue ts checked against the log");

        for trigger in [behavioral, lexical].into_iter().flatten() {
            if self.debouncer.admit(&trigger) {
                self.queue.push_back(trigger);
            }
        }
        let Some(trigger) = self.queue.pop_front() else {
            return Ok(out);
        };
        let mediated = match self.cfg.backend {
            BackendKind::Oracle => self.rt.mediator.infer_oracle(&trigger, &self.memory.lock().expect("memory poisoned")),
            BackendKind::Llm => {
                let memory = self.memory.lock().expect("memory poisoned").clone();
                let recent: Vec<AffectInference> = self.recent.iter().cloned().collect();
                self.rt.mediator.infer_llm(&trigger, &memory, &recent)
            }
        };
        match mediated {
            Ok(m) => {
                let processing_ms = match self.rt.clock {
                    ClockMode::Virtual => 0,
                    ClockMode::Measured => started.elapsed().as_millis() as u64,
                };
                let inference_ts = cue_ts.plus_ms(processing_ms);
                out.records.extend(self.emit(&trigger, m, inference_ts, raw_text.as_deref())?);
            }
            Err(e) => {
                tracing::warn!(session = %self.id, error = %e, "mediation failed; trigger stays queued");
                self.queue.push_front(trigger);
                out.mediation_error = Some(e);
            }
        }
        Ok(out)
    }

    fn emit(&mut self, trigger: &TriggerCue, m: Mediated, ts: Timestamp, raw_text: Option<&str>) -> Result<Vec<LogRecord>, SessionError> {
        let mut rationale = m.response.rationale;
        if !self.cfg.consent.store_raw_utterances {
            let quoted = raw_text.into_iter().chain(trigger.text.as_deref()).any(|t| !t.trim().is_empty() && rationale.contains(t.trim()));
            if quoted {
                rationale = REDACTED_RATIONALE.to_string();
            }
        }
        let inference = AffectInference {
            id: record_id(Stream::Inference, self.log.len() as u64),
            ts,
            state: m.response.state,
            confidence: m.response.confidence,
            rationale,
            source_cue_ids: trigger.source_cue_ids.clone(),
            backend: m.source,
        };
        self.recent.push_back(inference.clone());
        if self.recent.len() > RECENT_INFERENCES {
            self.recent.pop_front();
        }
        let mut records = vec![self.append(RecordBody::Inference(inference.clone()))?];

        let Some(class) = m.response.intervention_class else {
            return Ok(records);
        };
        let seq = self.log.len() as u64;
        let plan = AdaptationPlan {
            id: plan_id(seq),
            ts,
            inference_id: inference.id,
            intervention_class: class,
            commands: m.response.commands.clone(),
            from_memory: m.from_memory,
        };
        let trigger_ts = trigger.source_cue_ids.iter().filter_map(|id| self.log.cue_ts(id)).max().unwrap_or(trigger.ts);
        let at = ts.plus_ms(self.rt.actuator_delay_ms);
        let record = self.actuators.apply(seq, plan, trigger_ts, at).expect("actuation time follows the log");
        let signature = self.memory.lock().expect("memory poisoned").signature_for(trigger);
        self.plans.insert(record.plan.id.clone(), PlanMemo { signature, class, commands: m.response.commands });
        records.push(self.append(RecordBody::Actuation(record))?);
        Ok(records)
    }

    /// Logs a rating and feeds it into the participant's memory.
    /// `ts` is clamped to the log's last timestamp.
    pub fn record_rating(&mut self, plan: &str, verdict: Verdict, ts: Timestamp) -> Result<LogRecord, SessionError> {
        self.ensure_running()?;
        let Some(memo) = self.plans.get(plan).cloned() else {
            return Err(SessionError::UnknownPlan(plan.to_string()));
        };
        if self.log.is_rated(plan) {
            return Err(SessionError::DuplicateRating(plan.to_string()));
        }
        let ts = ts.max(self.last_ts());
        let id = record_id(Stream::Evaluation, self.log.len() as u64);
        let record = self.append(RecordBody::Evaluation(EvaluationEvent {
            id,
            ts,
            kind: Evaluation::Rating { plan_id: plan.to_string(), verdict },
        }))?;
        self.memory.lock().expect("memory poisoned").update(memo.signature, memo.class, memo.commands, verdict, self.cfg.session_index, ts);
        Ok(record)
    }

    /// Ids of plans not yet rated, in log order.
    pub fn unrated_plans(&self) -> Vec<String> {
        self.log
            .records()
            .iter()
            .filter_map(|r| match &r.body {
                RecordBody::Actuation(a) if !self.log.is_rated(&a.plan.id) => Some(a.plan.id.clone()),
                _ => None,
            })
            .collect()
    }

    /// Seals the log with a footer and flushes the participant's memory.
    /// Queued triggers are dropped.
    pub fn end(&mut self, ts: Timestamp) -> Result<LogRecord, SessionError> {
        self.ensure_running()?;
        if !self.queue.is_empty() {
            tracing::info!(session = %self.id, dropped = self.queue.len(), "dropping queued triggers at session end");
            self.queue.clear();
        }
        let seq = self.log.len() as u64;
        let ts = ts.max(self.last_ts());
        let footer = self.append(RecordBody::Session(SessionMarker {
            id: record_id(Stream::Session, seq),
            ts,
            kind: Marker::Footer { records: seq + 1 },
        }))?;
        self.ended = true;
        if let Some((path, f)) = &mut self.file {
            f.sync_all().map_err(|e| SessionError::Io(format!("{}: {e}", path.display())))?;
        }
        self.rt.memory.flush(&self.cfg.participant)?;
        Ok(footer)
    }
}
