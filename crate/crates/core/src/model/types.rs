//! Event vocabulary shared by every stage of the pipeline.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;
use serde_json::Value;

/// Milliseconds since session start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_secs(s: u64) -> Self {
        Timestamp(s * 1000)
    }

    pub fn ms(self) -> u64 {
        self.0
    }

    pub fn plus_ms(self, ms: u64) -> Self {
        Timestamp(self.0 + ms)
    }

    pub fn since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

macro_rules! str_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s { $($s => Some($name::$variant),)+ _ => None }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

str_enum!(
    /// Categorical interpretation of one or more cues.
    AffectState {
        Drowsy => "drowsy",
        FocusLoss => "focus_loss",
        Distracted => "distracted",
        Stressed => "stressed",
        Overwhelmed => "overwhelmed",
        FocusRequest => "focus_request",
        Neutral => "neutral",
    }
);

str_enum!(InterventionClass {
    DrowsinessRecovery => "drowsiness_recovery",
    FocusRestoration => "focus_restoration",
    DistractionMitigation => "distraction_mitigation",
    StressAlleviation => "stress_alleviation",
});

str_enum!(Posture { Upright => "upright", Slumped => "slumped" });
str_enum!(DomainClass { Work => "work", Social => "social", Other => "other" });
str_enum!(ReportKind { Focus => "focus", Stress => "stress", Alertness => "alertness" });
str_enum!(Verdict { Helpful => "helpful", Intrusive => "intrusive", Irrelevant => "irrelevant" });
str_enum!(SoundMode { Off => "off", WhiteNoise => "white_noise", Ambient => "ambient" });
str_enum!(ScreenMode {
    Normal => "normal",
    LowStimulation => "low_stimulation",
    Immersive => "immersive",
    BlockSocial => "block_social",
});
str_enum!(Modality { Onscreen => "onscreen", Voice => "voice" });
str_enum!(
    /// Which route produced an inference.
    InferenceSource { Oracle => "oracle", Llm => "llm", Memory => "memory" }
);
str_enum!(
    /// Mediation backend a session is configured with.
    BackendKind { Oracle => "oracle", Llm => "llm" }
);

/// Writes a thousandths value as a decimal with exactly three fractional digits.
fn format_milli(milli: i32) -> String {
    let sign = if milli < 0 { "-" } else { "" };
    let abs = milli.unsigned_abs();
    format!("{sign}{}.{:03}", abs / 1000, abs % 1000)
}

fn serialize_milli<S: Serializer>(milli: i32, s: S) -> Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(format_milli(milli)).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

fn milli_from_f64(x: f64) -> Option<i32> {
    if !x.is_finite() {
        return None;
    }
    let scaled = (x * 1000.0).round();
    if scaled.abs() > i32::MAX as f64 {
        return None;
    }
    Some(scaled as i32)
}

/// A confidence in `[0, 1]`, held at a resolution of 0.001.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Confidence(u16);

impl Confidence {
    pub fn from_milli(milli: u16) -> Option<Self> {
        (milli <= 1000).then_some(Confidence(milli))
    }

    pub fn from_f64(x: f64) -> Option<Self> {
        let m = milli_from_f64(x)?;
        (0..=1000).contains(&m).then_some(Confidence(m as u16))
    }

    pub fn milli(self) -> u16 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 1000.0
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_milli(i32::from(self.0)))
    }
}

impl Serialize for Confidence {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_milli(i32::from(self.0), s)
    }
}

impl<'de> Deserialize<'de> for Confidence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let x = f64::deserialize(d)?;
        Confidence::from_f64(x).ok_or_else(|| D::Error::custom(format!("confidence {x} outside [0,1]")))
    }
}

/// Rated outcome of a past intervention in `[-1, 1]`, resolution 0.001.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutcomeScore(i16);

impl OutcomeScore {
    pub fn from_f64(x: f64) -> Option<Self> {
        let m = milli_from_f64(x)?;
        (-1000..=1000).contains(&m).then_some(OutcomeScore(m as i16))
    }

    pub fn from_verdict(v: Verdict) -> Self {
        match v {
            Verdict::Helpful => OutcomeScore(1000),
            Verdict::Irrelevant => OutcomeScore(0),
            Verdict::Intrusive => OutcomeScore(-1000),
        }
    }

    pub fn milli(self) -> i16 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 1000.0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl fmt::Display for OutcomeScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_milli(i32::from(self.0)))
    }
}

impl Serialize for OutcomeScore {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_milli(i32::from(self.0), s)
    }
}

impl<'de> Deserialize<'de> for OutcomeScore {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let x = f64::deserialize(d)?;
        OutcomeScore::from_f64(x).ok_or_else(|| D::Error::custom(format!("outcome_score {x} outside [-1,1]")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueEvent {
    pub id: String,
    pub ts: Timestamp,
    #[serde(flatten)]
    pub payload: CuePayload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "channel", rename_all = "snake_case")]
pub enum CuePayload {
    Utterance {
        text: String,
        #[serde(default)]
        hint: Option<AffectState>,
    },
    Behavior {
        gaze_on_screen: bool,
        posture: Posture,
    },
    Activity {
        domain_class: DomainClass,
        visit_span_s: u32,
    },
    SelfReport {
        kind: ReportKind,
        value: u8,
    },
}

impl CuePayload {
    pub fn channel(&self) -> &'static str {
        match self {
            CuePayload::Utterance { .. } => "utterance",
            CuePayload::Behavior { .. } => "behavior",
            CuePayload::Activity { .. } => "activity",
            CuePayload::SelfReport { .. } => "self_report",
        }
    }

    /// Checks the per-channel value ranges.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            CuePayload::SelfReport { value, .. } if !(1..=5).contains(value) => {
                Err(format!("self_report value {value} outside 1..5"))
            }
            CuePayload::Activity { visit_span_s: 0, .. } => Err("visit_span_s must be > 0".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectInference {
    pub id: String,
    pub ts: Timestamp,
    pub state: AffectState,
    pub confidence: Confidence,
    pub rationale: String,
    pub source_cue_ids: Vec<String>,
    pub backend: InferenceSource,
}

/// One instruction to one actuator.
///
/// Serialized with a leading `type` tag; this is also the actuator wire format.
/// Deserialization goes through [`command_from_value`] so every decoder applies
/// the same range checks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActuatorCommand {
    Light {
        brightness_pct: u8,
        color_temp_k: u16,
        ramp_s: u32,
    },
    Sound {
        mode: SoundMode,
    },
    Screen {
        mode: ScreenMode,
        duration_s: u32,
    },
    Prompt {
        text: String,
        duration_s: u32,
        modality: Modality,
    },
}

pub const BRIGHTNESS_RANGE: std::ops::RangeInclusive<i64> = 0..=100;
pub const COLOR_TEMP_RANGE: std::ops::RangeInclusive<i64> = 1500..=8000;
pub const PROMPT_TEXT_MAX: usize = 280;

impl ActuatorCommand {
    pub fn target(&self) -> &'static str {
        match self {
            ActuatorCommand::Light { .. } => "light",
            ActuatorCommand::Sound { .. } => "sound",
            ActuatorCommand::Screen { .. } => "screen",
            ActuatorCommand::Prompt { .. } => "prompt",
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let v = serde_json::to_value(self).expect("command serializes");
        command_from_value(&v).map(|_| ())
    }
}

/// A field-level validation failure. `path` is relative to the value checked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub reason: String,
}

impl FieldError {
    pub fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        FieldError { path: path.into(), reason: reason.into() }
    }

    pub fn under(self, prefix: &str) -> Self {
        let path = if self.path.is_empty() {
            prefix.to_string()
        } else if self.path.starts_with('[') {
            format!("{prefix}{}", self.path)
        } else {
            format!("{prefix}.{}", self.path)
        };
        FieldError { path, reason: self.reason }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.reason)
        } else {
            write!(f, "{}: {}", self.path, self.reason)
        }
    }
}

fn int_field(obj: &serde_json::Map<String, Value>, key: &str, range: std::ops::RangeInclusive<i64>) -> Result<i64, FieldError> {
    let v = obj.get(key).ok_or_else(|| FieldError::new(key, "missing field"))?;
    let n = v.as_i64().ok_or_else(|| FieldError::new(key, format!("expected integer, got {v}")))?;
    if !range.contains(&n) {
        return Err(FieldError::new(key, format!("{n} outside {}..{}", range.start(), range.end())));
    }
    Ok(n)
}

fn enum_field<T>(obj: &serde_json::Map<String, Value>, key: &str, parse: fn(&str) -> Option<T>) -> Result<T, FieldError> {
    let v = obj.get(key).ok_or_else(|| FieldError::new(key, "missing field"))?;
    let s = v.as_str().ok_or_else(|| FieldError::new(key, format!("expected string, got {v}")))?;
    parse(s).ok_or_else(|| FieldError::new(key, format!("unknown value `{s}`")))
}

/// Strict decoder for [`ActuatorCommand`]: exact field set, typed values, ranges.
pub fn command_from_value(v: &Value) -> Result<ActuatorCommand, FieldError> {
    let obj = v.as_object().ok_or_else(|| FieldError::new("", "expected object"))?;
    let target = obj
        .get("type")
        .ok_or_else(|| FieldError::new("type", "missing field"))?
        .as_str()
        .ok_or_else(|| FieldError::new("type", "expected string"))?;
    let allowed: &[&str] = match target {
        "light" => &["type", "brightness_pct", "color_temp_k", "ramp_s"],
        "sound" => &["type", "mode"],
        "screen" => &["type", "mode", "duration_s"],
        "prompt" => &["type", "text", "duration_s", "modality"],
        other => return Err(FieldError::new("type", format!("unknown command target `{other}`"))),
    };
    if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(FieldError::new(extra.as_str(), "unexpected field"));
    }
    let u32_range = 0..=i64::from(u32::MAX);
    let cmd = match target {
        "light" => ActuatorCommand::Light {
            brightness_pct: int_field(obj, "brightness_pct", BRIGHTNESS_RANGE)? as u8,
            color_temp_k: int_field(obj, "color_temp_k", COLOR_TEMP_RANGE)? as u16,
            ramp_s: int_field(obj, "ramp_s", u32_range)? as u32,
        },
        "sound" => ActuatorCommand::Sound { mode: enum_field(obj, "mode", SoundMode::parse)? },
        "screen" => {
            let mode = enum_field(obj, "mode", ScreenMode::parse)?;
            let duration_s = int_field(obj, "duration_s", u32_range)? as u32;
            if mode == ScreenMode::BlockSocial && duration_s == 0 {
                return Err(FieldError::new("duration_s", "block_social requires duration_s > 0"));
            }
            ActuatorCommand::Screen { mode, duration_s }
        }
        _ => {
            let text = obj
                .get("text")
                .ok_or_else(|| FieldError::new("text", "missing field"))?
                .as_str()
                .ok_or_else(|| FieldError::new("text", "expected string"))?;
            if text.trim().is_empty() || text.chars().count() > PROMPT_TEXT_MAX {
                return Err(FieldError::new("text", format!("prompt text must be 1..{PROMPT_TEXT_MAX} characters")));
            }
            ActuatorCommand::Prompt {
                text: text.to_string(),
                duration_s: int_field(obj, "duration_s", 1..=i64::from(u32::MAX))? as u32,
                modality: enum_field(obj, "modality", Modality::parse)?,
            }
        }
    };
    Ok(cmd)
}

impl<'de> Deserialize<'de> for ActuatorCommand {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        command_from_value(&v).map_err(|e| D::Error::custom(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationPlan {
    pub id: String,
    pub ts: Timestamp,
    pub inference_id: String,
    pub intervention_class: InterventionClass,
    pub commands: Vec<ActuatorCommand>,
    pub from_memory: bool,
}

/// A plan as dispatched to the actuators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActuationRecord {
    pub id: String,
    pub ts: Timestamp,
    pub plan: AdaptationPlan,
    pub commands_applied: u32,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationEvent {
    pub id: String,
    pub ts: Timestamp,
    #[serde(flatten)]
    pub kind: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evaluation {
    Rating { plan_id: String, verdict: Verdict },
    Consent { store_raw_utterances: bool },
}

/// Session header and footer records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMarker {
    pub id: String,
    pub ts: Timestamp,
    #[serde(flatten)]
    pub kind: Marker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marker {
    Header {
        participant: String,
        session_index: u32,
        backend: BackendKind,
        seed: u64,
        store_raw_utterances: bool,
    },
    Footer {
        records: u64,
    },
}
