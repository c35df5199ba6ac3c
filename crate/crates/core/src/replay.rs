//! Deterministic replay: a simulated participant drives real sessions on a
//! virtual clock, then the resulting logs are scored.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::config::EngineConfig;
use crate::mediation::llm::ChatBackend;
use crate::mediation::memory::MemoryStore;
use crate::mediation::Mediator;
use crate::metrics::{compute_report, render_json, MetricsError, MetricsReport};
use crate::model::{log_file_name, BackendKind, RecordBody, SessionLog};
use crate::session::{ClockMode, Consent, CueInput, Runtime, Session, SessionConfig, SessionError};
use crate::simuser::{session_seed, Profile, ScenarioError, ScenarioScript, SimUser};

pub const REPLAY_REDACTION_KEY: &[u8] = b"workpod-replay";
pub const DEFAULT_PARTICIPANT: &str = "p01";

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("REPLAY_IO: {0}")]
    Io(String),
    #[error("INVALID_OPTIONS: {0}")]
    Options(String),
}

#[derive(Clone)]
pub struct ReplayOptions {
    pub sessions: u32,
    pub seed: Option<u64>,
    pub profile: Option<String>,
    pub participant: String,
    pub store_raw_utterances: bool,
    pub actuator_delay_ms: u64,
    pub backend: BackendKind,
    pub chat: Option<Arc<dyn ChatBackend>>,
    pub config: EngineConfig,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            sessions: 4,
            seed: None,
            profile: None,
            participant: DEFAULT_PARTICIPANT.into(),
            store_raw_utterances: true,
            actuator_delay_ms: 0,
            backend: BackendKind::Oracle,
            chat: None,
            config: EngineConfig::default(),
        }
    }
}

impl std::fmt::Debug for ReplayOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReplayOptions")
            .field("sessions", &self.sessions)
            .field("seed", &self.seed)
            .field("profile", &self.profile)
            .field("backend", &self.backend)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub logs: Vec<SessionLog>,
    pub report: MetricsReport,
    pub passed: bool,
    /// Files written, in write order (empty without an output directory).
    pub files: Vec<PathBuf>,
}

fn io(path: &Path, e: std::io::Error) -> ReplayError {
    ReplayError::Io(format!("{}: {e}", path.display()))
}

/// Replays `script` for `opts.sessions` sessions. With `out`, logs, the
/// memory file and `report.json` land there; same-named files from an
/// earlier run are replaced.
pub fn replay(script: &ScenarioScript, opts: &ReplayOptions, out: Option<&Path>) -> Result<ReplayOutcome, ReplayError> {
    if opts.sessions == 0 {
        return Err(ReplayError::Options("--sessions must be >= 1".into()));
    }
    let profile = match &opts.profile {
        Some(name) => Profile::builtin(name).ok_or_else(|| ScenarioError::UnknownProfile(name.clone()))?,
        None => script.profile.clone(),
    };
    let profile = Profile { baseline_gaze_off_rate: script.profile.baseline_gaze_off_rate, ..profile };
    let seed = opts.seed.unwrap_or(script.seed);

    let memory = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
            for i in 1..=opts.sessions {
                remove_if_present(&dir.join(log_file_name(&opts.participant, i)))?;
            }
            remove_if_present(&dir.join(format!("{}.memory.jsonl", opts.participant)))?;
            remove_if_present(&dir.join("report.json"))?;
            MemoryStore::open(dir).map_err(SessionError::from)?
        }
        None => MemoryStore::in_memory(),
    };
    let mediator = match (&opts.backend, &opts.chat) {
        (BackendKind::Llm, Some(chat)) => Mediator::with_backend(opts.config.mediation.clone(), Arc::clone(chat)),
        _ => Mediator::oracle(opts.config.mediation.clone()),
    };
    let rt = Runtime {
        mediator: Arc::new(mediator),
        memory: Arc::new(memory),
        actuators: opts.config.actuators.clone(),
        actuator_delay_ms: opts.actuator_delay_ms,
        clock: ClockMode::Virtual,
        redaction_key: Arc::from(REPLAY_REDACTION_KEY),
        log_dir: out.map(Path::to_path_buf),
        ..Runtime::default()
    };

    let mut logs = Vec::new();
    let mut files = Vec::new();
    for index in 1..=opts.sessions {
        let s_seed = session_seed(seed, index);
        let cfg = SessionConfig {
            participant: opts.participant.clone(),
            session_index: index,
            backend: opts.backend,
            detector: opts.config.detector.clone(),
            consent: Consent { store_raw_utterances: opts.store_raw_utterances },
            seed: s_seed,
        };
        let log = run_session(script, &profile, s_seed, cfg, &rt)?;
        if let Some(dir) = out {
            files.push(dir.join(log_file_name(&opts.participant, index)));
        }
        logs.push(log);
    }

    let mut report = compute_report(&logs, &opts.config.metrics)?;
    report.thresholds = script.thresholds.iter().map(|t| t.evaluate(&report)).collect();
    let passed = report.thresholds.iter().all(|t| t.pass);
    if let Some(dir) = out {
        files.push(dir.join(format!("{}.memory.jsonl", opts.participant)));
        let path = dir.join("report.json");
        fs::write(&path, render_json(&report)).map_err(|e| io(&path, e))?;
        files.push(path);
    }
    Ok(ReplayOutcome { logs, report, passed, files })
}

fn remove_if_present(path: &Path) -> Result<(), ReplayError> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(io(path, e)),
        _ => Ok(()),
    }
}

fn run_session(script: &ScenarioScript, profile: &Profile, seed: u64, cfg: SessionConfig, rt: &Runtime) -> Result<SessionLog, ReplayError> {
    let mut user = SimUser::new(script, profile.clone(), seed);
    let mut session = Session::start(cfg, rt)?;
    for tick in 0..=script.duration_s {
        for cue in user.step(tick) {
            let ts = cue.ts.max(session.last_ts());
            let out = session.ingest(CueInput { ts, payload: cue.payload })?;
            for r in &out.records {
                if let RecordBody::Actuation(a) = &r.body {
                    user.observe(a);
                }
            }
        }
    }
    let end = session.last_ts();
    let classes: Vec<(String, _)> = session
        .log()
        .records()
        .iter()
        .filter_map(|r| match &r.body {
            RecordBody::Actuation(a) => Some((a.plan.id.clone(), a.plan.intervention_class)),
            _ => None,
        })
        .collect();
    for (plan, class) in classes {
        let verdict = user.rate(class);
        session.record_rating(&plan, verdict, end)?;
    }
    session.end(end)?;
    Ok(session.log().clone())
}
