//! Utterance routing by keyword stems.
//!
//! Rule syntax, one per line (`#` starts a comment):
//!
//! ```text
//! overwhelm* → overwhelmed
//! focus*     → focus_request | want need
//! ```
//!
//! A trailing `*` matches any token starting with the stem; otherwise the token
//! must equal it. Words after `|` are required companions: at least one of them
//! must also occur in the utterance. The first matching rule in file order wins.
//! `->` is accepted in place of `→`.

use thiserror::Error;

use crate::model::AffectState;

pub const DEFAULT_LEXICON: &str = include_str!("../../lexicon.txt");

#[derive(Debug, Error, PartialEq, Eq)]
#[error("lexicon line {line}: {reason}")]
pub struct LexiconError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    stem: String,
    prefix: bool,
    state: AffectState,
    requires: Vec<String>,
}

impl Rule {
    fn matches(&self, tokens: &[String]) -> bool {
        let hit = tokens
            .iter()
            .any(|t| if self.prefix { t.starts_with(&self.stem) } else { *t == self.stem });
        hit && (self.requires.is_empty() || tokens.iter().any(|t| self.requires.contains(t)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    rules: Vec<Rule>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::parse(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| LexiconError { line: i + 1, reason: reason.to_string() };
            let (lhs, rhs) = line
                .split_once('→')
                .or_else(|| line.split_once("->"))
                .ok_or_else(|| err("expected `stem → state`"))?;
            let stem = lhs.trim().to_lowercase();
            let (stem, prefix) = match stem.strip_suffix('*') {
                Some(s) => (s.to_string(), true),
                None => (stem, false),
            };
            if stem.is_empty() || stem.contains(char::is_whitespace) {
                return Err(err("stem must be a single word"));
            }
            let (state_part, requires) = match rhs.split_once('|') {
                Some((s, req)) => (s, req.split_whitespace().map(str::to_lowercase).collect()),
                None => (rhs, Vec::new()),
            };
            let state_name = state_part.trim();
            let state = AffectState::parse(state_name).ok_or_else(|| err(&format!("unknown state `{state_name}`")))?;
            if state == AffectState::Neutral {
                return Err(err("rules cannot route to neutral"));
            }
            rules.push(Rule { stem, prefix, state, requires });
        }
        Ok(Lexicon { rules })
    }

    pub fn route(&self, text: &str) -> Option<AffectState> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return None;
        }
        self.rules.iter().find(|r| r.matches(&tokens)).map(|r| r.state)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Lowercased word tokens; apostrophes stay inside words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’'))
        .map(|t| t.trim_matches(|c| c == '\'' || c == '’').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "i", "i'm", "im", "me", "my", "is", "am", "are", "be", "this", "that", "it", "it's", "to", "of",
    "and", "or", "so", "bit", "just", "really", "very", "out", "feel", "feeling",
];

/// Token set used for cue similarity.
pub fn signature_tokens(text: &str) -> std::collections::BTreeSet<String> {
    tokenize(text).into_iter().filter(|t| !STOPWORDS.contains(&t.as_str())).collect()
}

/// Routes with the bundled lexicon.
pub fn route_utterance(text: &str) -> Option<AffectState> {
    thread_local! {
        static DEFAULT: Lexicon = Lexicon::default();
    }
    DEFAULT.with(|l| l.route(text))
}
