//! Scenario scripts: one JSON object per line, tagged by `type`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Profile;
use crate::metrics::Threshold;
use crate::model::{DomainClass, Posture, ReportKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("PARSE_ERROR: {path}: line {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("UNKNOWN_PROFILE: `{0}` (known: responsive, non_responsive)")]
    UnknownProfile(String),
    #[error("PARSE_ERROR: {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub kind: ReportKind,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptLine {
    Scenario {
        name: String,
        profile: String,
        seed: u64,
        duration_s: u64,
        /// Overrides the profile's baseline off-screen episode rate.
        #[serde(default)]
        gaze_off_rate: Option<f64>,
    },
    Utterance {
        at_s: u64,
        text: String,
        #[serde(default)]
        pre_report: Option<Report>,
    },
    Posture {
        at_s: u64,
        posture: Posture,
    },
    GazeAway {
        at_s: u64,
        duration_s: u64,
        #[serde(default)]
        pre_report: Option<Report>,
    },
    SocialVisits {
        at_s: u64,
        spans_s: Vec<u32>,
        #[serde(default)]
        pre_report: Option<Report>,
    },
    ActivityBaseline {
        domain: DomainClass,
        every_s: u64,
    },
    Threshold(Threshold),
}

/// A scripted stimulus at a fixed offset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ScriptEvent {
    Utterance { at_s: u64, text: String, pre_report: Option<Report> },
    Posture { at_s: u64, posture: Posture },
    GazeAway { at_s: u64, duration_s: u64, pre_report: Option<Report> },
    SocialVisits { at_s: u64, spans_s: Vec<u32>, pre_report: Option<Report> },
}

impl ScriptEvent {
    pub fn at_s(&self) -> u64 {
        match self {
            ScriptEvent::Utterance { at_s, .. }
            | ScriptEvent::Posture { at_s, .. }
            | ScriptEvent::GazeAway { at_s, .. }
            | ScriptEvent::SocialVisits { at_s, .. } => *at_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioScript {
    pub name: String,
    pub profile: Profile,
    pub seed: u64,
    pub duration_s: u64,
    pub events: Vec<ScriptEvent>,
    pub activity_baseline: Option<(DomainClass, u64)>,
    pub thresholds: Vec<Threshold>,
}

impl ScenarioScript {
    /// Every scripted utterance, for privacy scans.
    pub fn utterances(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(|e| match e {
            ScriptEvent::Utterance { text, .. } => Some(text.as_str()),
            _ => None,
        })
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioScript, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    parse_scenario(&path.display().to_string(), &text)
}

pub fn parse_scenario(source: &str, text: &str) -> Result<ScenarioScript, ScenarioError> {
    let err = |line: usize, reason: String| ScenarioError::Parse { path: source.to_string(), line, reason };
    let mut header = None;
    let mut events = Vec::new();
    let mut activity_baseline = None;
    let mut thresholds = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: ScriptLine = serde_json::from_str(raw).map_err(|e| err(n, e.to_string()))?;
        match (line, header.is_some()) {
            (ScriptLine::Scenario { name, profile, seed, duration_s, gaze_off_rate }, false) => {
                let mut p = Profile::builtin(&profile).ok_or(ScenarioError::UnknownProfile(profile))?;
                if let Some(rate) = gaze_off_rate {
                    if !(rate.is_finite() && rate >= 0.0) {
                        return Err(err(n, "gaze_off_rate must be >= 0".into()));
                    }
                    p.baseline_gaze_off_rate = rate;
                }
                if duration_s == 0 {
                    return Err(err(n, "duration_s must be positive".into()));
                }
                header = Some((name, p, seed, duration_s));
            }
            (ScriptLine::Scenario { .. }, true) => return Err(err(n, "second scenario header".into())),
            (_, false) => return Err(err(n, "the first line must be the scenario header".into())),
            (ScriptLine::Utterance { at_s, text, pre_report }, true) => {
                if text.trim().is_empty() {
                    return Err(err(n, "utterance text is empty".into()));
                }
                events.push(ScriptEvent::Utterance { at_s, text, pre_report });
            }
            (ScriptLine::Posture { at_s, posture }, true) => events.push(ScriptEvent::Posture { at_s, posture }),
            (ScriptLine::GazeAway { at_s, duration_s, pre_report }, true) => {
                if duration_s == 0 {
                    return Err(err(n, "gaze_away duration_s must be positive".into()));
                }
                events.push(ScriptEvent::GazeAway { at_s, duration_s, pre_report });
            }
            (ScriptLine::SocialVisits { at_s, spans_s, pre_report }, true) => {
                if spans_s.is_empty() || spans_s.contains(&0) {
                    return Err(err(n, "spans_s must be non-empty and positive".into()));
                }
                events.push(ScriptEvent::SocialVisits { at_s, spans_s, pre_report });
            }
            (ScriptLine::ActivityBaseline { domain, every_s }, true) => {
                if every_s == 0 {
                    return Err(err(n, "every_s must be positive".into()));
                }
                activity_baseline = Some((domain, every_s));
            }
            (ScriptLine::Threshold(t), true) => {
                t.validate().map_err(|e| err(n, e))?;
                thresholds.push(t);
            }
        }
        if let Some(r) = events.last().and_then(pre_report) {
            if !(1..=5).contains(&r.value) {
                return Err(err(n, format!("pre_report value {} outside 1..5", r.value)));
            }
        }
        if events.len() >= 2 && events[events.len() - 2].at_s() > events[events.len() - 1].at_s() {
            return Err(err(n, "events must be in time order".into()));
        }
    }
    let (name, profile, seed, duration_s) = header.ok_or_else(|| err(0, "empty scenario".into()))?;
    if let Some(e) = events.iter().find(|e| e.at_s() > duration_s) {
        return Err(err(0, format!("event at {} s is past duration_s", e.at_s())));
    }
    Ok(ScenarioScript { name, profile, seed, duration_s, events, activity_baseline, thresholds })
}

fn pre_report(e: &ScriptEvent) -> Option<Report> {
    match e {
        ScriptEvent::Utterance { pre_report, .. }
        | ScriptEvent::GazeAway { pre_report, .. }
        | ScriptEvent::SocialVisits { pre_report, .. } => *pre_report,
        ScriptEvent::Posture { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: &str = r#"{"type":"scenario","name":"t","profile":"responsive","seed":7,"duration_s":600}
{"type":"utterance","at_s":300,"text":"I'm feeling a bit drowsy.","pre_report":{"kind":"alertness","value":2}}
{"type":"threshold","metric":"alertness_delta","class":"drowsiness_recovery","op":"==","value":1}
"#;

    #[test]
    fn parses() {
        let s = parse_scenario("t", S).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.utterances().collect::<Vec<_>>(), vec!["I'm feeling a bit drowsy."]);
        assert_eq!(s.thresholds.len(), 1);
    }

    #[test]
    fn empty_is_parse_error() {
        assert!(matches!(parse_scenario("e", ""), Err(ScenarioError::Parse { .. })));
    }

    #[test]
    fn unknown_profile() {
        let text = S.replace("\"responsive\"", "\"stoic\"");
        assert_eq!(parse_scenario("t", &text), Err(ScenarioError::UnknownProfile("stoic".into())));
    }

    #[test]
    fn out_of_order_events_rejected() {
        let text = format!("{S}{}\n", r#"{"type":"posture","at_s":10,"posture":"slumped"}"#);
        assert!(matches!(parse_scenario("t", &text), Err(ScenarioError::Parse { line: 4, .. })));
    }

    #[test]
    fn unknown_line_type_rejected() {
        let text = format!("{S}{}\n", r#"{"type":"hvac","at_s":400}"#);
        assert!(matches!(parse_scenario("t", &text), Err(ScenarioError::Parse { .. })));
    }
}
