//! Deterministic prompt template for the remote backend.

use std::fmt::Write as _;

use super::intervention_class;
use super::memory::{MemoryEntry, PersonalizationMemory};
use crate::detect::{TriggerCue, TriggerKind};
use crate::model::{ActuatorCommand, AffectInference, AffectState};

pub const MAX_RECENT_INFERENCES: usize = 5;
pub const MAX_MEMORY_ENTRIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    /// Both messages as one text block.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

fn system_message() -> String {
    let mut s = String::new();
    s.push_str(
        "You mediate between one occupant of an adaptive workpod and the room. \
         Read the cue below, infer the occupant's state, and decide how light, sound, screen and prompts should adapt. \
         Prefer gentle, reversible changes and never repeat an intervention the occupant rated intrusive.\n\n",
    );
    s.push_str("Allowed states and the intervention class each one requires:\n");
    for state in AffectState::ALL {
        let class = intervention_class(*state).map_or("null (commands must be empty)".to_string(), |c| c.to_string());
        let _ = writeln!(s, "  {state} -> {class}");
    }
    s.push_str(
        "\nCommand vocabulary (JSON objects with exactly these fields):\n\
         \x20 {\"type\":\"light\",\"brightness_pct\":0-100,\"color_temp_k\":1500-8000,\"ramp_s\":>=0}\n\
         \x20 {\"type\":\"sound\",\"mode\":\"off\"|\"white_noise\"|\"ambient\"}\n\
         \x20 {\"type\":\"screen\",\"mode\":\"normal\"|\"low_stimulation\"|\"immersive\"|\"block_social\",\"duration_s\":>=0 (block_social needs >0; 0 means until changed)}\n\
         \x20 {\"type\":\"prompt\",\"text\":\"1-280 chars\",\"duration_s\":>0,\"modality\":\"onscreen\"|\"voice\"}\n\n\
         Response contract: reply with exactly one JSON object and nothing else. \
         Keys: \"state\", \"confidence\" (number in [0,1]), \"rationale\" (short text), \
         \"intervention_class\" (as mapped above), \"commands\" (array; empty only for neutral). No other keys.",
    );
    s
}

fn describe_command(c: &ActuatorCommand) -> String {
    match c {
        ActuatorCommand::Light { brightness_pct, color_temp_k, ramp_s } => {
            format!("light {color_temp_k}K {brightness_pct}% ramp {ramp_s}s")
        }
        ActuatorCommand::Sound { mode } => format!("sound {mode}"),
        ActuatorCommand::Screen { mode, duration_s } => format!("screen {mode} {duration_s}s"),
        ActuatorCommand::Prompt { text, duration_s, modality } => format!("prompt {modality} {duration_s}s {text:?}"),
    }
}

fn describe_entry(e: &MemoryEntry) -> String {
    let cmds: Vec<String> = e.template.iter().map(describe_command).collect();
    format!(
        "- session {}: {} with outcome_score {} [{}]",
        e.session_index,
        e.intervention_class,
        e.outcome_score,
        cmds.join("; ")
    )
}

pub fn build_prompt(trigger: &TriggerCue, memory: &PersonalizationMemory, recent: &[AffectInference]) -> Prompt {
    let mut u = String::new();
    let state = trigger.implied_state();
    match trigger.kind {
        TriggerKind::Lexical => {
            let _ = writeln!(u, "Trigger: utterance (lexicon hint: {state})");
            if let Some(text) = &trigger.text {
                let _ = writeln!(u, "Utterance: {text:?}");
            }
        }
        TriggerKind::GazeOff => u.push_str("Trigger: gaze away from the screen beyond the configured threshold\n"),
        TriggerKind::Distraction => u.push_str("Trigger: consecutive long visits to social media\n"),
    }
    let _ = writeln!(u, "Source cues: {}", trigger.source_cue_ids.join(", "));
    let _ = writeln!(u, "Time: {} ms since session start", trigger.ts.ms());

    u.push_str("\nRecent inferences:\n");
    let start = recent.len().saturating_sub(MAX_RECENT_INFERENCES);
    if recent[start..].is_empty() {
        u.push_str("- none\n");
    }
    for inf in &recent[start..] {
        let _ = writeln!(u, "- {} at {} ms: {} ({}, {})", inf.id, inf.ts.ms(), inf.state, inf.confidence, inf.backend);
    }

    let _ = writeln!(u, "\nPrior interactions for state {state}:");
    let entries = memory.entries_for_state(state, MAX_MEMORY_ENTRIES);
    if entries.is_empty() {
        u.push_str("- no prior interactions\n");
    }
    for e in entries {
        u.push_str(&describe_entry(e));
        u.push('\n');
    }
    Prompt { system: system_message(), user: u }
}
