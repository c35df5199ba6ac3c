//! Simulated actuator registry: light ramps, sound, screen modes, prompts.
//!
//! State is a pure function of (initial state, applied commands, query time).
//! Ramps keep their endpoints and start time; intermediate values are
//! interpolated on demand, independently per light dimension.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    command_from_value, record_id, ActuationRecord, ActuatorCommand, AdaptationPlan, Modality, ScreenMode, SoundMode, Stream,
    Timestamp,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ActuationError {
    #[error("TIME_REGRESSION: actuator time {got} precedes {last}")]
    TimeRegression { last: Timestamp, got: Timestamp },
    #[error("DECODE_ERROR: {0}")]
    Decode(String),
}

/// Encodes one command as a wire line (no trailing newline).
pub fn encode_command(cmd: &ActuatorCommand) -> String {
    serde_json::to_string(cmd).expect("commands serialize")
}

pub fn decode_command(msg: &str) -> Result<ActuatorCommand, ActuationError> {
    let v: serde_json::Value = serde_json::from_str(msg.trim_end_matches(['\r', '\n'])).map_err(|e| ActuationError::Decode(e.to_string()))?;
    command_from_value(&v).map_err(|e| ActuationError::Decode(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightLevel {
    pub brightness_pct: u8,
    pub color_temp_k: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuatorDefaults {
    pub light: LightLevel,
    pub sound: SoundMode,
    pub screen: ScreenMode,
}

impl Default for ActuatorDefaults {
    fn default() -> Self {
        ActuatorDefaults {
            light: LightLevel { brightness_pct: 70, color_temp_k: 4000 },
            sound: SoundMode::Off,
            screen: ScreenMode::Normal,
        }
    }
}

/// Values in thousandths of a unit, so preempted ramps restart without
/// accumulating rounding error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Milli {
    brightness: i64,
    temp: i64,
}

impl Milli {
    fn of(l: LightLevel) -> Self {
        Milli { brightness: i64::from(l.brightness_pct) * 1000, temp: i64::from(l.color_temp_k) * 1000 }
    }

    fn level(self) -> LightLevel {
        let round = |m: i64| (m + 500).div_euclid(1000);
        LightLevel { brightness_pct: round(self.brightness) as u8, color_temp_k: round(self.temp) as u16 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Ramp {
    from: Milli,
    to: Milli,
    start: Timestamp,
    duration_ms: u64,
}

impl Ramp {
    fn at(&self, now: Timestamp) -> Milli {
        let elapsed = now.since(self.start).min(self.duration_ms);
        if self.duration_ms == 0 || elapsed == self.duration_ms {
            return self.to;
        }
        let lerp = |a: i64, b: i64| a + (b - a) * elapsed as i64 / self.duration_ms as i64;
        Milli { brightness: lerp(self.from.brightness, self.to.brightness), temp: lerp(self.from.temp, self.to.temp) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivePrompt {
    pub text: String,
    pub modality: Modality,
    pub expires_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenSnapshot {
    pub mode: ScreenMode,
    pub block_remaining_s: u64,
}

/// Point-in-time view of every actuator, as pushed to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuatorSnapshot {
    pub ts: Timestamp,
    pub light: LightLevel,
    pub light_target: LightLevel,
    pub sound: SoundMode,
    pub screen: ScreenSnapshot,
    pub active_prompts: Vec<ActivePrompt>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActuatorState {
    now: Timestamp,
    ramp: Ramp,
    sound: SoundMode,
    screen: ScreenMode,
    screen_until: Option<Timestamp>,
    prompts: Vec<ActivePrompt>,
}

impl Default for ActuatorState {
    fn default() -> Self {
        ActuatorState::new(&ActuatorDefaults::default())
    }
}

impl ActuatorState {
    pub fn new(d: &ActuatorDefaults) -> Self {
        let level = Milli::of(d.light);
        ActuatorState {
            now: Timestamp::ZERO,
            ramp: Ramp { from: level, to: level, start: Timestamp::ZERO, duration_ms: 0 },
            sound: d.sound,
            screen: d.screen,
            screen_until: None,
            prompts: Vec::new(),
        }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn light(&self) -> LightLevel {
        self.ramp.at(self.now).level()
    }

    pub fn light_target(&self) -> LightLevel {
        self.ramp.to.level()
    }

    pub fn sound(&self) -> SoundMode {
        self.sound
    }

    pub fn screen(&self) -> ScreenMode {
        self.screen
    }

    /// Whole seconds left on a timed screen mode, rounded up.
    pub fn block_remaining_s(&self) -> u64 {
        self.screen_until.map_or(0, |until| until.since(self.now).div_ceil(1000))
    }

    pub fn active_prompts(&self) -> &[ActivePrompt] {
        &self.prompts
    }

    pub fn snapshot(&self) -> ActuatorSnapshot {
        ActuatorSnapshot {
            ts: self.now,
            light: self.light(),
            light_target: self.light_target(),
            sound: self.sound,
            screen: ScreenSnapshot { mode: self.screen, block_remaining_s: self.block_remaining_s() },
            active_prompts: self.prompts.clone(),
        }
    }

    /// Advances the clock, expiring timed screen modes and prompts.
    pub fn step(&mut self, now: Timestamp) -> Result<(), ActuationError> {
        if now < self.now {
            return Err(ActuationError::TimeRegression { last: self.now, got: now });
        }
        self.now = now;
        if self.screen_until.is_some_and(|until| until <= now) {
            self.screen = ScreenMode::Normal;
            self.screen_until = None;
        }
        self.prompts.retain(|p| p.expires_at > now);
        Ok(())
    }

    /// Applies one command at the current time.
    pub fn execute(&mut self, cmd: &ActuatorCommand) {
        let now = self.now;
        match cmd {
            ActuatorCommand::Light { brightness_pct, color_temp_k, ramp_s } => {
                let from = self.ramp.at(now);
                let to = Milli::of(LightLevel { brightness_pct: *brightness_pct, color_temp_k: *color_temp_k });
                self.ramp = Ramp { from, to, start: now, duration_ms: u64::from(*ramp_s) * 1000 };
            }
            ActuatorCommand::Sound { mode } => self.sound = *mode,
            ActuatorCommand::Screen { mode, duration_s } => {
                self.screen = *mode;
                self.screen_until = (*duration_s > 0 && *mode != ScreenMode::Normal).then(|| now.plus_ms(u64::from(*duration_s) * 1000));
            }
            ActuatorCommand::Prompt { text, duration_s, modality } => self.prompts.push(ActivePrompt {
                text: text.clone(),
                modality: *modality,
                expires_at: now.plus_ms(u64::from(*duration_s) * 1000),
            }),
        }
    }

    /// Advances to `now`, executes every command in order, and builds the
    /// actuation record at `seq`. Latency runs from `trigger_ts` to `now`.
    pub fn apply(
        &mut self,
        seq: u64,
        plan: AdaptationPlan,
        trigger_ts: Timestamp,
        now: Timestamp,
    ) -> Result<ActuationRecord, ActuationError> {
        self.step(now.max(plan.ts))?;
        for cmd in &plan.commands {
            self.execute(cmd);
        }
        Ok(ActuationRecord {
            id: record_id(Stream::Actuation, seq),
            ts: self.now,
            latency_ms: self.now.since(trigger_ts),
            commands_applied: plan.commands.len() as u32,
            plan,
        })
    }
}

/// Time at which the last light ramp in `state` reaches its target.
pub fn ramp_completion(state: &ActuatorState) -> Timestamp {
    state.ramp.start.plus_ms(state.ramp.duration_ms)
}
