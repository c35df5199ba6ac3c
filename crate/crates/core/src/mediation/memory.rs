//! Per-participant personalization memory.
//!
//! Entries map a cue signature to the plan that answered it and how it was
//! rated. Signature tokens are stored as keyed digests, so a memory file never
//! holds the words a participant said.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::detect::{TriggerCue, TriggerKind};
use crate::model::{ActuatorCommand, AffectState, InterventionClass, OutcomeScore, Timestamp, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueSignature {
    pub state: AffectState,
    pub tokens: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub signature: CueSignature,
    pub intervention_class: InterventionClass,
    pub template: Vec<ActuatorCommand>,
    pub outcome_score: OutcomeScore,
    pub session_index: u32,
    pub ts: Timestamp,
}

/// Set similarity; two empty sets are identical.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PersonalizationMemory {
    participant: String,
    entries: Vec<MemoryEntry>,
}

impl PersonalizationMemory {
    pub fn new(participant: impl Into<String>) -> Self {
        PersonalizationMemory { participant: participant.into(), entries: Vec::new() }
    }

    pub fn participant(&self) -> &str {
        &self.participant
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn token_digest(&self, token: &str) -> String {
        let mut mac = Hmac::<Sha256>::new_from_slice(self.participant.as_bytes()).expect("hmac accepts any key length");
        mac.update(token.as_bytes());
        hex::encode(&mac.finalize().into_bytes()[..8])
    }

    pub fn signature_for(&self, trigger: &TriggerCue) -> CueSignature {
        CueSignature {
            state: trigger.implied_state(),
            tokens: trigger.tokens.iter().map(|t| self.token_digest(t)).collect(),
        }
    }

    /// Best stored entry for a cue: same state, and for lexical cues a token
    /// Jaccard of at least `threshold`. Highest score wins, then the most recent.
    /// Entries with a negative score are never returned.
    pub fn lookup(&self, signature: &CueSignature, lexical: bool, threshold: f64) -> Option<&MemoryEntry> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.signature.state == signature.state && !e.outcome_score.is_negative())
            .filter(|(_, e)| !lexical || jaccard(&e.signature.tokens, &signature.tokens) >= threshold)
            .max_by_key(|(i, e)| (e.outcome_score, e.session_index, e.ts, *i))
            .map(|(_, e)| e)
    }

    /// Up to `limit` entries for a state, best first.
    pub fn entries_for_state(&self, state: AffectState, limit: usize) -> Vec<&MemoryEntry> {
        let mut v: Vec<(usize, &MemoryEntry)> =
            self.entries.iter().enumerate().filter(|(_, e)| e.signature.state == state).collect();
        v.sort_by(|(ia, a), (ib, b)| (b.outcome_score, b.session_index, b.ts, ib).cmp(&(a.outcome_score, a.session_index, a.ts, ia)));
        v.into_iter().take(limit).map(|(_, e)| e).collect()
    }

    /// Inserts or replaces the entry for `signature` with the rated outcome.
    pub fn update(
        &mut self,
        signature: CueSignature,
        intervention_class: InterventionClass,
        template: Vec<ActuatorCommand>,
        verdict: Verdict,
        session_index: u32,
        ts: Timestamp,
    ) -> &MemoryEntry {
        let entry = MemoryEntry {
            signature,
            intervention_class,
            template,
            outcome_score: OutcomeScore::from_verdict(verdict),
            session_index,
            ts,
        };
        match self.entries.iter().position(|e| e.signature == entry.signature) {
            Some(i) => {
                self.entries[i] = entry;
                &self.entries[i]
            }
            None => {
                self.entries.push(entry);
                self.entries.last().expect("just pushed")
            }
        }
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("memory entries serialize") + "\n")
            .collect()
    }

    pub fn from_jsonl(participant: impl Into<String>, text: &str) -> Result<Self, StoreError> {
        let mut mem = PersonalizationMemory::new(participant);
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: MemoryEntry = serde_json::from_str(line)
                .map_err(|e| StoreError::Corrupt(format!("{}: line {}: {e}", mem.participant, i + 1)))?;
            mem.entries.push(entry);
        }
        Ok(mem)
    }
}

/// `memory_lookup` keyed on a trigger.
pub fn memory_lookup<'m>(trigger: &TriggerCue, memory: &'m PersonalizationMemory, threshold: f64) -> Option<&'m MemoryEntry> {
    let sig = memory.signature_for(trigger);
    memory.lookup(&sig, trigger.kind == TriggerKind::Lexical, threshold)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("STORE_UNAVAILABLE: {0}")]
    Unavailable(String),
    #[error("STORE_UNAVAILABLE: corrupt memory file {0}")]
    Corrupt(String),
    #[error("invalid participant id `{0}` (use letters, digits, `-` or `_`)")]
    InvalidParticipant(String),
}

pub type SharedMemory = Arc<Mutex<PersonalizationMemory>>;

pub fn valid_participant_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Holds each participant's memory once; sessions of the same participant
/// share the same handle. With a directory, memories load from and flush to
/// `{participant}.memory.jsonl`.
#[derive(Debug, Default)]
pub struct MemoryStore {
    dir: Option<PathBuf>,
    cache: Mutex<HashMap<String, SharedMemory>>,
}

impl MemoryStore {
    pub fn in_memory() -> Self {
        MemoryStore::default()
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| StoreError::Unavailable(format!("{}: {e}", dir.display())))?;
        Ok(MemoryStore { dir: Some(dir.to_path_buf()), cache: Mutex::default() })
    }

    pub fn path_for(&self, participant: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{participant}.memory.jsonl")))
    }

    pub fn participant(&self, participant: &str) -> Result<SharedMemory, StoreError> {
        if !valid_participant_id(participant) {
            return Err(StoreError::InvalidParticipant(participant.to_string()));
        }
        let mut cache = self.cache.lock().expect("memory cache poisoned");
        if let Some(m) = cache.get(participant) {
            return Ok(Arc::clone(m));
        }
        let mem = match self.path_for(participant) {
            Some(path) if path.exists() => {
                let text = fs::read_to_string(&path).map_err(|e| StoreError::Unavailable(format!("{}: {e}", path.display())))?;
                PersonalizationMemory::from_jsonl(participant, &text)?
            }
            _ => PersonalizationMemory::new(participant),
        };
        let shared = Arc::new(Mutex::new(mem));
        cache.insert(participant.to_string(), Arc::clone(&shared));
        Ok(shared)
    }

    /// Writes the participant's memory file (no-op for in-memory stores).
    pub fn flush(&self, participant: &str) -> Result<(), StoreError> {
        let Some(path) = self.path_for(participant) else {
            return Ok(());
        };
        let shared = self.participant(participant)?;
        let text = shared.lock().expect("memory poisoned").to_jsonl();
        let tmp = path.with_extension("jsonl.tmp");
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| StoreError::Unavailable(format!("{}: {e}", path.display())))
    }
}
