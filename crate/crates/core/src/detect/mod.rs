//! Turns channel streams into debounced trigger cues.
//!
//! Each detector has an incremental form (used by the live session loop) and a
//! batch function over a whole stream. The batch functions fold the incremental
//! detectors, so both paths share one implementation.

mod lexicon;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{AffectState, CueEvent, CuePayload, DomainClass, Timestamp};

pub use lexicon::{route_utterance, signature_tokens, tokenize, Lexicon, LexiconError, DEFAULT_LEXICON};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub gaze_off_threshold_s: u64,
    pub social_visit_min_s: u32,
    pub social_visit_count: usize,
    pub cooldown_s: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { gaze_off_threshold_s: 10, social_visit_min_s: 300, social_visit_count: 2, cooldown_s: 120 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.gaze_off_threshold_s == 0 || self.social_visit_min_s == 0 || self.social_visit_count == 0 || self.cooldown_s == 0
        {
            return Err("detector thresholds must all be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TriggerKind {
    GazeOff,
    Distraction,
    Lexical,
}

/// A detector-level event that warrants mediation. Lives only in memory; the
/// log keeps the cues it cites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerCue {
    pub kind: TriggerKind,
    pub lexical_state: Option<AffectState>,
    pub source_cue_ids: Vec<String>,
    pub ts: Timestamp,
    /// Similarity tokens of the utterance (lexical triggers only).
    pub tokens: BTreeSet<String>,
    /// Original utterance text, kept for the remote backend prompt.
    pub text: Option<String>,
}

impl TriggerCue {
    /// Lexical trigger for an utterance cue, if the lexicon yields a hint.
    pub fn lexical(cue: &CueEvent, text: &str, hint: Option<AffectState>) -> Option<TriggerCue> {
        let state = hint?;
        Some(TriggerCue {
            kind: TriggerKind::Lexical,
            lexical_state: Some(state),
            source_cue_ids: vec![cue.id.clone()],
            ts: cue.ts,
            tokens: signature_tokens(text),
            text: Some(text.to_string()),
        })
    }

    fn behavioral(kind: TriggerKind, source_cue_ids: Vec<String>, ts: Timestamp) -> TriggerCue {
        TriggerCue { kind, lexical_state: None, source_cue_ids, ts, tokens: BTreeSet::new(), text: None }
    }

    /// The affect state this trigger implies before any backend weighs in.
    pub fn implied_state(&self) -> AffectState {
        match self.kind {
            TriggerKind::GazeOff => AffectState::FocusLoss,
            TriggerKind::Distraction => AffectState::Distracted,
            TriggerKind::Lexical => self.lexical_state.unwrap_or(AffectState::Neutral),
        }
    }
}

/// Incremental off-screen run tracker.
#[derive(Debug, Clone)]
pub struct GazeDetector {
    threshold_ms: u64,
    run: Option<GazeRun>,
}

#[derive(Debug, Clone)]
struct GazeRun {
    start: Timestamp,
    start_id: String,
    fired: bool,
}

impl GazeDetector {
    pub fn new(cfg: &DetectorConfig) -> Self {
        GazeDetector { threshold_ms: cfg.gaze_off_threshold_s * 1000, run: None }
    }

    pub fn push(&mut self, cue: &CueEvent) -> Option<TriggerCue> {
        let CuePayload::Behavior { gaze_on_screen, .. } = cue.payload else {
            return None;
        };
        if gaze_on_screen {
            self.run = None;
            return None;
        }
        let run = self.run.get_or_insert_with(|| GazeRun { start: cue.ts, start_id: cue.id.clone(), fired: false });
        if !run.fired && cue.ts.since(run.start) > self.threshold_ms {
            run.fired = true;
            let mut ids = vec![run.start_id.clone()];
            if run.start_id != cue.id {
                ids.push(cue.id.clone());
            }
            return Some(TriggerCue::behavioral(TriggerKind::GazeOff, ids, cue.ts));
        }
        None
    }
}

/// Incremental consecutive-social-visit counter.
#[derive(Debug, Clone)]
pub struct DistractionDetector {
    min_span_s: u32,
    count: usize,
    run: Vec<String>,
}

impl DistractionDetector {
    pub fn new(cfg: &DetectorConfig) -> Self {
        DistractionDetector { min_span_s: cfg.social_visit_min_s, count: cfg.social_visit_count, run: Vec::new() }
    }

    pub fn push(&mut self, cue: &CueEvent) -> Option<TriggerCue> {
        let CuePayload::Activity { domain_class, visit_span_s } = cue.payload else {
            return None;
        };
        if domain_class != DomainClass::Social || visit_span_s < self.min_span_s {
            self.run.clear();
            return None;
        }
        self.run.push(cue.id.clone());
        if self.run.len() == self.count {
            let ids = std::mem::take(&mut self.run);
            return Some(TriggerCue::behavioral(TriggerKind::Distraction, ids, cue.ts));
        }
        None
    }
}

/// Per-kind cooldown filter. Lexical triggers are keyed by hinted state too.
#[derive(Debug, Clone)]
pub struct Debouncer {
    cooldown_ms: u64,
    last: HashMap<(TriggerKind, Option<AffectState>), Timestamp>,
}

impl Debouncer {
    pub fn new(cfg: &DetectorConfig) -> Self {
        Debouncer { cooldown_ms: cfg.cooldown_s * 1000, last: HashMap::new() }
    }

    pub fn admit(&mut self, trigger: &TriggerCue) -> bool {
        let key = (trigger.kind, trigger.lexical_state);
        if let Some(prev) = self.last.get(&key) {
            if trigger.ts.since(*prev) < self.cooldown_ms {
                return false;
            }
        }
        self.last.insert(key, trigger.ts);
        true
    }
}

pub fn detect_gaze_off(stream: &[CueEvent], cfg: &DetectorConfig) -> Vec<TriggerCue> {
    let mut d = GazeDetector::new(cfg);
    stream.iter().filter_map(|c| d.push(c)).collect()
}

pub fn detect_distraction(stream: &[CueEvent], cfg: &DetectorConfig) -> Vec<TriggerCue> {
    let mut d = DistractionDetector::new(cfg);
    stream.iter().filter_map(|c| d.push(c)).collect()
}

pub fn debounce(triggers: &[TriggerCue], cfg: &DetectorConfig) -> Vec<TriggerCue> {
    let mut d = Debouncer::new(cfg);
    triggers.iter().filter(|t| d.admit(t)).cloned().collect()
}

pub mod oracles {
    //! Brute-force reference scans, written without the incremental state machines.

    use super::*;

    /// For every sample, walk backwards to find where its off-screen run began;
    /// fire at the first sample of each run whose elapsed time exceeds the threshold.
    pub fn gaze_off(stream: &[CueEvent], threshold_s: u64) -> Vec<(Timestamp, Vec<String>)> {
        let behavior: Vec<&CueEvent> = stream.iter().filter(|c| matches!(c.payload, CuePayload::Behavior { .. })).collect();
        let off = |c: &CueEvent| matches!(c.payload, CuePayload::Behavior { gaze_on_screen: false, .. });
        let mut out = Vec::new();
        for i in 0..behavior.len() {
            if !off(behavior[i]) {
                continue;
            }
            let mut start = i;
            while start > 0 && off(behavior[start - 1]) {
                start -= 1;
            }
            let exceeds = |j: usize| behavior[j].ts.0 - behavior[start].ts.0 > threshold_s * 1000;
            let first_exceeding = (start..=i).find(|&j| exceeds(j));
            if first_exceeding == Some(i) {
                let mut ids = vec![behavior[start].id.clone()];
                if start != i {
                    ids.push(behavior[i].id.clone());
                }
                out.push((behavior[i].ts, ids));
            }
        }
        out
    }

    /// Scan every qualifying window of `count` adjacent activity samples, taking
    /// non-overlapping windows left to right.
    pub fn distraction(stream: &[CueEvent], min_s: u32, count: usize) -> Vec<(Timestamp, Vec<String>)> {
        let acts: Vec<&CueEvent> = stream.iter().filter(|c| matches!(c.payload, CuePayload::Activity { .. })).collect();
        let qualifies = |c: &CueEvent| {
            matches!(c.payload, CuePayload::Activity { domain_class: DomainClass::Social, visit_span_s } if visit_span_s >= min_s)
        };
        let mut out = Vec::new();
        let mut i = 0;
        while i + count <= acts.len() {
            if acts[i..i + count].iter().all(|c| qualifies(c)) {
                out.push((acts[i + count - 1].ts, acts[i..i + count].iter().map(|c| c.id.clone()).collect()));
                i += count;
            } else {
                i += 1;
            }
        }
        out
    }

    /// Keep a trigger iff no kept trigger of the same key lies in the preceding window.
    pub fn debounce(triggers: &[TriggerCue], cooldown_s: u64) -> Vec<TriggerCue> {
        let mut kept: Vec<TriggerCue> = Vec::new();
        for t in triggers {
            let blocked = kept.iter().any(|k| {
                k.kind == t.kind && k.lexical_state == t.lexical_state && t.ts.0 >= k.ts.0 && t.ts.0 - k.ts.0 < cooldown_s * 1000
            });
            if !blocked {
                kept.push(t.clone());
            }
        }
        kept
    }
}
