//! Semantic mediation: trigger cues in, affect inferences and adaptation plans out.
//!
//! Two interchangeable routes produce a [`MediationResponse`]: a deterministic
//! rule table ([`Mediator::infer_oracle`]) and a remote chat backend
//! ([`Mediator::infer_llm`]). Both consult personalization memory first and
//! both push their output through the same contract validator.

pub mod llm;
pub mod memory;
pub mod prompt;
pub mod response;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{TriggerCue, TriggerKind};
use crate::model::{
    ActuatorCommand, AffectInference, AffectState, Confidence, InferenceSource, InterventionClass, Modality, ScreenMode,
    SoundMode,
};
use llm::{message_content, BackendError, ChatBackend, ChatMessage, ChatRequest};
use memory::{PersonalizationMemory, MemoryEntry};
use prompt::build_prompt;
use response::{parse_response, validate_response_value, ContractViolation, MediationResponse};

pub const STRETCH_PROMPT: &str = "Try a two-minute standing stretch";
pub const BREAK_PROMPT: &str = "Take a 30-second break";
pub const BREATHING_PROMPT: &str = "Guided breathing: inhale 4 s, hold 4 s, exhale 6 s";

pub const LEXICAL_CONFIDENCE_MILLI: u16 = 900;
pub const BEHAVIORAL_CONFIDENCE_MILLI: u16 = 800;

/// Maps every affect state to its intervention class; neutral has none.
pub fn intervention_class(state: AffectState) -> Option<InterventionClass> {
    match state {
        AffectState::Drowsy => Some(InterventionClass::DrowsinessRecovery),
        AffectState::FocusLoss | AffectState::FocusRequest => Some(InterventionClass::FocusRestoration),
        AffectState::Distracted => Some(InterventionClass::DistractionMitigation),
        AffectState::Stressed | AffectState::Overwhelmed => Some(InterventionClass::StressAlleviation),
        AffectState::Neutral => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightPreset {
    pub brightness_pct: u8,
    pub color_temp_k: u16,
    pub ramp_s: u32,
}

impl LightPreset {
    pub fn command(self) -> ActuatorCommand {
        ActuatorCommand::Light { brightness_pct: self.brightness_pct, color_temp_k: self.color_temp_k, ramp_s: self.ramp_s }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Presets {
    pub cool_bright: LightPreset,
    pub glare_reduced: LightPreset,
    pub warm_calm: LightPreset,
}

impl Default for Presets {
    fn default() -> Self {
        Presets {
            cool_bright: LightPreset { brightness_pct: 90, color_temp_k: 6500, ramp_s: 10 },
            glare_reduced: LightPreset { brightness_pct: 50, color_temp_k: 4000, ramp_s: 10 },
            warm_calm: LightPreset { brightness_pct: 40, color_temp_k: 2700, ramp_s: 120 },
        }
    }
}

impl Presets {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("cool_bright", self.cool_bright), ("glare_reduced", self.glare_reduced), ("warm_calm", self.warm_calm)] {
            p.command().validate().map_err(|e| format!("preset {name}: {e}"))?;
        }
        Ok(())
    }
}

/// State → (class, command templates).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowTable {
    presets: Presets,
}

impl WorkflowTable {
    pub fn new(presets: Presets) -> Self {
        WorkflowTable { presets }
    }

    pub fn presets(&self) -> &Presets {
        &self.presets
    }

    pub fn plan_for(&self, state: AffectState) -> Option<(InterventionClass, Vec<ActuatorCommand>)> {
        let p = &self.presets;
        let prompt = |text: &str, duration_s, modality| ActuatorCommand::Prompt { text: text.to_string(), duration_s, modality };
        let commands = match state {
            AffectState::Drowsy => vec![p.cool_bright.command(), prompt(STRETCH_PROMPT, 120, Modality::Onscreen)],
            AffectState::FocusLoss => vec![prompt(BREAK_PROMPT, 30, Modality::Onscreen), p.glare_reduced.command()],
            AffectState::FocusRequest => {
                vec![ActuatorCommand::Screen { mode: ScreenMode::Immersive, duration_s: 0 }, p.glare_reduced.command()]
            }
            AffectState::Distracted => vec![
                ActuatorCommand::Screen { mode: ScreenMode::BlockSocial, duration_s: 300 },
                ActuatorCommand::Sound { mode: SoundMode::WhiteNoise },
            ],
            AffectState::Stressed => vec![p.warm_calm.command(), prompt(BREATHING_PROMPT, 120, Modality::Voice)],
            AffectState::Overwhelmed => vec![
                p.warm_calm.command(),
                ActuatorCommand::Sound { mode: SoundMode::Off },
                prompt(BREATHING_PROMPT, 120, Modality::Voice),
            ],
            AffectState::Neutral => return None,
        };
        Some((intervention_class(state).expect("non-neutral"), commands))
    }
}

fn interpretation(state: AffectState) -> &'static str {
    match state {
        AffectState::Drowsy => "low energy reported; alertness likely to drift",
        AffectState::FocusLoss => "sustained off-screen gaze; visual fatigue or lost focus",
        AffectState::Distracted => "repeated long social-media visits; attention has drifted",
        AffectState::Stressed => "explicit stress report; calming needed",
        AffectState::Overwhelmed => "sensory overload reported; reduce stimulation",
        AffectState::FocusRequest => "occupant asked for support to focus",
        AffectState::Neutral => "no adaptation warranted",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediationConfig {
    pub presets: Presets,
    pub similarity_threshold: f64,
    pub llm_timeout_ms: u64,
    pub llm_fallback: bool,
    pub llm_model: String,
}

impl Default for MediationConfig {
    fn default() -> Self {
        MediationConfig {
            presets: Presets::default(),
            similarity_threshold: 0.5,
            llm_timeout_ms: 800,
            llm_fallback: true,
            llm_model: "gpt-4o".to_string(),
        }
    }
}

impl MediationConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.presets.validate()?;
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err("similarity_threshold must lie in [0,1]".into());
        }
        if self.llm_timeout_ms == 0 {
            return Err("llm_timeout_ms must be positive".into());
        }
        Ok(())
    }
}

/// Outcome of mediating one trigger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mediated {
    pub response: MediationResponse,
    pub source: InferenceSource,
    pub from_memory: bool,
    /// Why the remote route was abandoned, when it was.
    pub fallback_reason: Option<String>,
}

impl Mediated {
    pub fn has_plan(&self) -> bool {
        self.response.state != AffectState::Neutral
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MediationError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("plan failed its own contract: {0}")]
    Contract(ContractViolation),
}

pub struct Mediator {
    table: WorkflowTable,
    cfg: MediationConfig,
    backend: Option<Arc<dyn ChatBackend>>,
}

impl std::fmt::Debug for Mediator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mediator").field("cfg", &self.cfg).field("remote", &self.backend.is_some()).finish()
    }
}

impl Default for Mediator {
    fn default() -> Self {
        Mediator::oracle(MediationConfig::default())
    }
}

impl Mediator {
    pub fn oracle(cfg: MediationConfig) -> Self {
        Mediator { table: WorkflowTable::new(cfg.presets.clone()), cfg, backend: None }
    }

    pub fn with_backend(cfg: MediationConfig, backend: Arc<dyn ChatBackend>) -> Self {
        Mediator { table: WorkflowTable::new(cfg.presets.clone()), cfg, backend: Some(backend) }
    }

    pub fn config(&self) -> &MediationConfig {
        &self.cfg
    }

    pub fn table(&self) -> &WorkflowTable {
        &self.table
    }

    pub fn has_backend(&self) -> bool {
        self.backend.is_some()
    }

    fn checked(response: MediationResponse) -> Result<MediationResponse, MediationError> {
        validate_response_value(&response.to_value()).map_err(MediationError::Contract)
    }

    fn recall(&self, trigger: &TriggerCue, memory: &PersonalizationMemory) -> Option<MemoryEntry> {
        if trigger.implied_state() == AffectState::Neutral {
            return None;
        }
        memory::memory_lookup(trigger, memory, self.cfg.similarity_threshold).cloned()
    }

    fn base_confidence(trigger: &TriggerCue) -> Confidence {
        let milli = if trigger.kind == TriggerKind::Lexical { LEXICAL_CONFIDENCE_MILLI } else { BEHAVIORAL_CONFIDENCE_MILLI };
        Confidence::from_milli(milli).expect("constant in range")
    }

    fn from_memory(trigger: &TriggerCue, hit: MemoryEntry) -> Result<Mediated, MediationError> {
        let state = trigger.implied_state();
        let response = Self::checked(MediationResponse {
            state,
            confidence: Self::base_confidence(trigger),
            rationale: format!(
                "recalled {} rated {} in session {} for a similar {state} cue",
                hit.intervention_class, hit.outcome_score, hit.session_index
            ),
            intervention_class: Some(hit.intervention_class),
            commands: hit.template,
        })?;
        Ok(Mediated { response, source: InferenceSource::Memory, from_memory: true, fallback_reason: None })
    }

    fn rule_based(&self, trigger: &TriggerCue) -> Result<Mediated, MediationError> {
        let state = trigger.implied_state();
        let (class, commands) = self.table.plan_for(state).map_or((None, Vec::new()), |(c, cmds)| (Some(c), cmds));
        let response = Self::checked(MediationResponse {
            state,
            confidence: Self::base_confidence(trigger),
            rationale: interpretation(state).to_string(),
            intervention_class: class,
            commands,
        })?;
        Ok(Mediated { response, source: InferenceSource::Oracle, from_memory: false, fallback_reason: None })
    }

    /// Deterministic rule route: memory first, then the workflow table.
    pub fn infer_oracle(&self, trigger: &TriggerCue, memory: &PersonalizationMemory) -> Result<Mediated, MediationError> {
        match self.recall(trigger, memory) {
            Some(hit) => Self::from_memory(trigger, hit),
            None => self.rule_based(trigger),
        }
    }

    fn fall_back(&self, trigger: &TriggerCue, reason: String) -> Result<Mediated, MediationError> {
        tracing::warn!(%reason, "remote mediation abandoned; using rule table");
        let mut m = self.rule_based(trigger)?;
        m.fallback_reason = Some(reason);
        Ok(m)
    }

    /// Remote route: memory first, then the chat backend with one corrective
    /// retry, falling back to the rule table on a second contract failure or
    /// (when enabled) on timeout or an unreachable backend.
    pub fn infer_llm(
        &self,
        trigger: &TriggerCue,
        memory: &PersonalizationMemory,
        recent: &[AffectInference],
    ) -> Result<Mediated, MediationError> {
        if let Some(hit) = self.recall(trigger, memory) {
            return Self::from_memory(trigger, hit);
        }
        let Some(backend) = &self.backend else {
            let err = BackendError::Unavailable("no remote backend configured".into());
            return if self.cfg.llm_fallback { self.fall_back(trigger, err.to_string()) } else { Err(err.into()) };
        };

        let prompt = build_prompt(trigger, memory, recent);
        let mut messages = vec![ChatMessage::new("system", prompt.system), ChatMessage::new("user", prompt.user)];
        let budget = Duration::from_millis(self.cfg.llm_timeout_ms);
        let started = Instant::now();
        let mut last_violation = None;

        for _attempt in 0..2 {
            let remaining = budget.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                let err = BackendError::Timeout(self.cfg.llm_timeout_ms);
                return if self.cfg.llm_fallback { self.fall_back(trigger, err.to_string()) } else { Err(err.into()) };
            }
            let request = ChatRequest::new(self.cfg.llm_model.clone(), messages.clone());
            let body = match backend.complete(&request, remaining) {
                Ok(body) => body,
                Err(err) if self.cfg.llm_fallback => return self.fall_back(trigger, err.to_string()),
                Err(err) => return Err(err.into()),
            };
            let content = message_content(&body);
            match parse_response(&content) {
                Ok(response) => {
                    return Ok(Mediated { response, source: InferenceSource::Llm, from_memory: false, fallback_reason: None })
                }
                Err(v) => {
                    messages.push(ChatMessage::new("assistant", content));
                    messages.push(ChatMessage::new(
                        "user",
                        format!(
                            "Your reply broke the response contract ({v}). \
                             Reply again with one corrected JSON object and nothing else."
                        ),
                    ));
                    last_violation = Some(v);
                }
            }
        }
        let v = last_violation.expect("loop only exits early on success");
        self.fall_back(trigger, format!("invalid backend output twice; last: {v}"))
    }
}
