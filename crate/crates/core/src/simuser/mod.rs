//! Deterministic simulated participant.
//!
//! A [`SimUser`] turns a [`ScenarioScript`] into a cue stream and reacts to
//! the actuations it observes. Profiles are test fixtures tuned to the
//! outcome targets; they make no claim about real people.
//!
//! Randomness comes from ChaCha8 seeded with [`session_seed`]; each purpose
//! draws from its own stream id, so adding draws to one purpose never shifts
//! another.

pub mod scenario;

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::model::{
    ActuationRecord, ActuatorCommand, CuePayload, DomainClass, InterventionClass, Posture, ReportKind, ScreenMode, Timestamp,
    Verdict,
};
use crate::session::CueInput;
pub use scenario::{load_scenario, parse_scenario, Report, ScenarioError, ScenarioScript, ScriptEvent};

pub const GAZE_STREAM: u64 = 1;
pub const RATING_STREAM: u64 = 2;

/// Length of the window the baseline off-screen rate is expressed over.
pub const RATE_WINDOW_S: f64 = 300.0;
/// Delay from an observed plan to the follow-up self-report.
pub const POST_REPORT_DELAY_S: u64 = 150;
/// Without a block, a social episode ends on its own after this long.
pub const NATURAL_RETURN_S: u64 = 900;
/// Neutral starting value for every self-report scale.
pub const REPORT_BASELINE: u8 = 3;

/// Per-session seed: the scenario seed with the session index in the high half.
pub fn session_seed(seed: u64, session_index: u32) -> u64 {
    seed ^ (u64::from(session_index) << 32)
}

/// A seeded ChaCha8 generator on stream `stream`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform draw in `[0, 1)` from the top 53 bits of one `u64`.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingPolicy {
    pub helpful: f64,
    pub intrusive: f64,
    pub irrelevant: f64,
}

impl RatingPolicy {
    pub fn pick(&self, u: f64) -> Verdict {
        if u < self.helpful {
            Verdict::Helpful
        } else if u < self.helpful + self.intrusive {
            Verdict::Intrusive
        } else {
            Verdict::Irrelevant
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub kind: ReportKind,
    pub delta: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub responsiveness: f64,
    /// Off-screen episodes per 300 s.
    pub baseline_gaze_off_rate: f64,
    pub post_break_gaze_off_multiplier: f64,
    pub return_to_work_delay_s: u64,
    /// Delay at zero responsiveness.
    pub unresponsive_return_delay_s: u64,
    pub posture_recovery_s: u64,
    pub unresponsive_posture_recovery_s: u64,
    pub self_report_response: BTreeMap<InterventionClass, ReportResponse>,
    pub rating_policy: BTreeMap<InterventionClass, RatingPolicy>,
}

impl Profile {
    pub fn responsive() -> Self {
        let policy = RatingPolicy { helpful: 0.9, intrusive: 0.0, irrelevant: 0.1 };
        Profile {
            name: "responsive".into(),
            responsiveness: 1.0,
            baseline_gaze_off_rate: 8.0,
            post_break_gaze_off_multiplier: 0.4,
            return_to_work_delay_s: 90,
            unresponsive_return_delay_s: 600,
            posture_recovery_s: 25,
            unresponsive_posture_recovery_s: 600,
            self_report_response: BTreeMap::from([
                (InterventionClass::DrowsinessRecovery, ReportResponse { kind: ReportKind::Alertness, delta: 1 }),
                (InterventionClass::FocusRestoration, ReportResponse { kind: ReportKind::Focus, delta: 1 }),
                (InterventionClass::DistractionMitigation, ReportResponse { kind: ReportKind::Focus, delta: 1 }),
                (InterventionClass::StressAlleviation, ReportResponse { kind: ReportKind::Stress, delta: -1 }),
            ]),
            rating_policy: InterventionClass::ALL.iter().map(|c| (*c, policy)).collect(),
        }
    }

    /// Control fixture: ignores every actuation.
    pub fn non_responsive() -> Self {
        let policy = RatingPolicy { helpful: 0.2, intrusive: 0.3, irrelevant: 0.5 };
        Profile {
            name: "non_responsive".into(),
            responsiveness: 0.0,
            rating_policy: InterventionClass::ALL.iter().map(|c| (*c, policy)).collect(),
            ..Profile::responsive()
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "responsive" => Some(Profile::responsive()),
            "non_responsive" => Some(Profile::non_responsive()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.responsiveness) {
            return Err("responsiveness must lie in [0,1]".into());
        }
        if self.baseline_gaze_off_rate < 0.0 || self.post_break_gaze_off_multiplier < 0.0 {
            return Err("rates and multipliers must be >= 0".into());
        }
        for (class, p) in &self.rating_policy {
            let sum = p.helpful + p.intrusive + p.irrelevant;
            if [p.helpful, p.intrusive, p.irrelevant].iter().any(|x| *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(format!("rating policy for {class} must be a distribution"));
            }
        }
        Ok(())
    }

    /// Rate multiplier once a focus break has been observed.
    pub fn effective_multiplier(&self) -> f64 {
        1.0 - self.responsiveness * (1.0 - self.post_break_gaze_off_multiplier)
    }

    fn scaled_delay(&self, responsive_s: u64, unresponsive_s: u64) -> u64 {
        let r = self.responsiveness;
        (responsive_s as f64 + (1.0 - r) * unresponsive_s.saturating_sub(responsive_s) as f64).round() as u64
    }

    pub fn effective_return_delay_s(&self) -> u64 {
        self.scaled_delay(self.return_to_work_delay_s, self.unresponsive_return_delay_s)
    }

    pub fn effective_posture_recovery_s(&self) -> u64 {
        self.scaled_delay(self.posture_recovery_s, self.unresponsive_posture_recovery_s)
    }

    pub fn report_delta(&self, class: InterventionClass) -> Option<(ReportKind, i8)> {
        self.self_report_response
            .get(&class)
            .map(|r| (r.kind, (f64::from(r.delta) * self.responsiveness).round() as i8))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activity {
    Work,
    Social { until: Option<u64> },
}

/// Pending scheduled outputs, keyed by due time in ms.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Pending {
    Report(ReportKind, i8),
    ReturnToWork,
    Upright,
}

#[derive(Debug, Clone)]
pub struct SimUser {
    profile: Profile,
    script: ScenarioScript,
    gaze_rng: ChaCha8Rng,
    rating_rng: ChaCha8Rng,
    /// Next scheduled off-screen episode start, in ms.
    next_episode_ms: Option<u64>,
    episode_until_ms: u64,
    multiplier: f64,
    posture: Posture,
    activity: Activity,
    reports: BTreeMap<ReportKind, u8>,
    pending: Vec<(u64, Pending)>,
    cursor: usize,
    social_queue: Vec<(u64, u32, Option<Report>)>,
    last_second: Option<u64>,
}

impl SimUser {
    pub fn new(script: &ScenarioScript, profile: Profile, seed: u64) -> Self {
        let mut user = SimUser {
            gaze_rng: rng_for(seed, GAZE_STREAM),
            rating_rng: rng_for(seed, RATING_STREAM),
            next_episode_ms: None,
            episode_until_ms: 0,
            multiplier: 1.0,
            posture: Posture::Upright,
            activity: Activity::Work,
            reports: ReportKind::ALL.iter().map(|k| (*k, REPORT_BASELINE)).collect(),
            pending: Vec::new(),
            cursor: 0,
            social_queue: Vec::new(),
            last_second: None,
            script: script.clone(),
            profile,
        };
        user.next_episode_ms = user.draw_interval_ms();
        user
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    fn draw_interval_ms(&mut self) -> Option<u64> {
        let rate = self.profile.baseline_gaze_off_rate * self.multiplier;
        if rate <= 0.0 {
            return None;
        }
        let jitter = 1.0 + 0.4 * (unit_f64(&mut self.gaze_rng) - 0.5);
        Some((RATE_WINDOW_S / rate * jitter * 1000.0).round() as u64)
    }

    fn draw_duration_ms(&mut self) -> u64 {
        2000 + (unit_f64(&mut self.gaze_rng) * 5.0).floor() as u64 * 1000
    }

    fn in_scripted_gaze(&self, ms: u64) -> bool {
        self.script.events.iter().any(|e| match e {
            ScriptEvent::GazeAway { at_s, duration_s, .. } => (at_s * 1000..(at_s + duration_s) * 1000).contains(&ms),
            _ => false,
        })
    }

    fn report(&mut self, kind: ReportKind, value: u8, ts: u64) -> CueInput {
        self.reports.insert(kind, value);
        CueInput::new(Timestamp(ts), CuePayload::SelfReport { kind, value })
    }

    /// Absorbs actuations the user has just seen.
    pub fn observe(&mut self, act: &ActuationRecord) {
        let at = act.ts.ms();
        let class = act.plan.intervention_class;
        if let Some((kind, delta)) = self.profile.report_delta(class) {
            self.pending.push((at + POST_REPORT_DELAY_S * 1000, Pending::Report(kind, delta)));
        }
        for cmd in &act.plan.commands {
            match cmd {
                ActuatorCommand::Prompt { .. } if class == InterventionClass::FocusRestoration => self.apply_break(at),
                ActuatorCommand::Prompt { .. } if class == InterventionClass::DrowsinessRecovery && self.posture != Posture::Upright => {
                    self.pending.push((at + self.profile.effective_posture_recovery_s() * 1000, Pending::Upright));
                }
                ActuatorCommand::Screen { mode: ScreenMode::BlockSocial, .. } if matches!(self.activity, Activity::Social { .. }) => {
                    self.pending.push((at + self.profile.effective_return_delay_s() * 1000, Pending::ReturnToWork));
                }
                _ => {}
            }
        }
    }

    /// Lowers the off-screen rate for the rest of the session, rescaling the
    /// wait for the already-scheduled episode.
    fn apply_break(&mut self, at: u64) {
        let m = self.profile.effective_multiplier();
        if m == self.multiplier {
            return;
        }
        if let Some(next) = self.next_episode_ms {
            if next > at {
                let scale = if m > 0.0 { self.multiplier / m } else { f64::INFINITY };
                let wait = (next - at) as f64 * scale;
                self.next_episode_ms = wait.is_finite().then(|| at + wait.round() as u64);
            }
        }
        self.multiplier = m;
    }

    fn activity_sample(&self, ts: u64, domain: DomainClass, span: u32) -> CueInput {
        CueInput::new(Timestamp(ts), CuePayload::Activity { domain_class: domain, visit_span_s: span })
    }

    /// Emits every cue due in `(previous step, now_s]`, at 1 s resolution.
    pub fn step(&mut self, now_s: u64) -> Vec<CueInput> {
        let first = self.last_second.map_or(0, |s| s + 1);
        let mut out = Vec::new();
        for s in first..=now_s {
            self.second(s, &mut out);
        }
        self.last_second = Some(now_s.max(self.last_second.unwrap_or(0)));
        out
    }

    fn second(&mut self, s: u64, out: &mut Vec<CueInput>) {
        let ms = s * 1000;

        // Scheduled responses due by now, in due order.
        self.pending.sort_by_key(|(due, _)| *due);
        while self.pending.first().is_some_and(|(due, _)| *due <= ms) {
            let (due, p) = self.pending.remove(0);
            match p {
                Pending::Report(kind, delta) => {
                    let v = (i16::from(self.reports[&kind]) + i16::from(delta)).clamp(1, 5) as u8;
                    out.push(self.report(kind, v, due));
                }
                Pending::Upright => self.posture = Posture::Upright,
                Pending::ReturnToWork => {
                    if matches!(self.activity, Activity::Social { .. }) {
                        self.activity = Activity::Work;
                        out.push(self.activity_sample(due, DomainClass::Work, 1));
                    }
                }
            }
        }

        // Scripted events starting this second.
        while self.cursor < self.script.events.len() && self.script.events[self.cursor].at_s() == s {
            let e = self.script.events[self.cursor].clone();
            self.cursor += 1;
            match e {
                ScriptEvent::Posture { posture, .. } => self.posture = posture,
                ScriptEvent::Utterance { text, pre_report, .. } => {
                    if let Some(r) = pre_report {
                        out.push(self.report(r.kind, r.value, ms));
                    }
                    out.push(CueInput::utterance(Timestamp(ms), &text));
                }
                ScriptEvent::GazeAway { pre_report, .. } => {
                    if let Some(r) = pre_report {
                        out.push(self.report(r.kind, r.value, ms));
                    }
                }
                ScriptEvent::SocialVisits { spans_s, pre_report, .. } => {
                    self.activity = Activity::Social { until: None };
                    let mut t = s;
                    let last = spans_s.len() - 1;
                    for (i, span) in spans_s.into_iter().enumerate() {
                        t += u64::from(span);
                        self.social_queue.push((t, span, if i == last { pre_report } else { None }));
                    }
                }
            }
        }

        // Social visit completions.
        while self.social_queue.first().is_some_and(|(t, _, _)| *t == s) {
            let (t, span, report) = self.social_queue.remove(0);
            if let Some(r) = report {
                out.push(self.report(r.kind, r.value, ms));
            }
            out.push(self.activity_sample(ms, DomainClass::Social, span));
            if self.social_queue.is_empty() {
                self.activity = Activity::Social { until: Some(t + NATURAL_RETURN_S) };
            }
        }
        if let Activity::Social { until: Some(end) } = self.activity {
            if s >= end {
                self.activity = Activity::Work;
                out.push(self.activity_sample(ms, DomainClass::Work, 1));
            }
        }

        // Baseline activity, suppressed while scripted visits are in flight.
        if let Some((domain, every)) = self.script.activity_baseline {
            if s > 0 && s.is_multiple_of(every) && self.social_queue.is_empty() {
                let d = if matches!(self.activity, Activity::Social { .. }) { DomainClass::Social } else { domain };
                out.push(self.activity_sample(ms, d, every as u32));
            }
        }

        // Baseline off-screen episodes.
        if let Some(next) = self.next_episode_ms {
            if next <= ms {
                let duration = self.draw_duration_ms();
                if !self.in_scripted_gaze(ms) && ms >= self.episode_until_ms {
                    self.episode_until_ms = ms + duration;
                }
                self.next_episode_ms = self.draw_interval_ms().map(|d| ms + d);
            }
        }
        let off = ms < self.episode_until_ms || self.in_scripted_gaze(ms);
        out.push(CueInput::new(Timestamp(ms), CuePayload::Behavior { gaze_on_screen: !off, posture: self.posture }));
    }

    /// Draws a verdict for a plan of `class`.
    pub fn rate(&mut self, class: InterventionClass) -> Verdict {
        let u = unit_f64(&mut self.rating_rng);
        self.profile.rating_policy.get(&class).map_or(Verdict::Irrelevant, |p| p.pick(u))
    }
}
