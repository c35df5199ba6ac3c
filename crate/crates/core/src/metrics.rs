//! Outcome metrics computed from session logs alone.
//!
//! Every field of a [`MetricsReport`] is a pure function of log bytes. Raw
//! utterance text is never read, so redacted and unredacted logs of the same
//! run yield identical reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AffectState, CuePayload, DomainClass, Evaluation, InferenceSource, InterventionClass, Marker, Posture, RecordBody,
    ReportKind, SessionLog, Timestamp, Verdict, ActuatorCommand,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("PARTICIPANT_MISMATCH: logs belong to `{0}` and `{1}`")]
    ParticipantMismatch(String, String),
    #[error("LATENCY_MISMATCH: session {session} {plan}: record says {recorded} ms, timestamps give {recomputed} ms")]
    LatencyMismatch { session: u32, plan: String, recorded: u64, recomputed: u64 },
    #[error("NOT_SEALED: session {0} has no footer")]
    NotSealed(u32),
    #[error("MISSING_HEADER: log has no session header")]
    MissingHeader,
    #[error("DUPLICATE_SESSION: session_index {0} appears twice")]
    DuplicateSession(u32),
    #[error("NO_LOGS: at least one log is required")]
    NoLogs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub report_pre_window_s: u64,
    pub report_post_window_s: u64,
    pub gaze_window_s: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { report_pre_window_s: 300, report_post_window_s: 180, gaze_window_s: 300 }
    }
}

/// Rounds to three decimals for stable report bytes.
fn r3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn pct(n: usize, d: usize) -> Option<f64> {
    (d > 0).then(|| r3(100.0 * n as f64 / d as f64))
}

fn secs(ms: u64) -> f64 {
    r3(ms as f64 / 1000.0)
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Per-session lookup tables, built once per log.
#[derive(Debug, Clone, Default)]
pub struct SessionIndex {
    pub participant: String,
    pub session_index: u32,
    pub sealed: bool,
    reports: BTreeMap<ReportKind, Vec<(u64, Timestamp, u8)>>,
    gaze_starts: Vec<Timestamp>,
    work_samples: Vec<(u64, Timestamp)>,
    upright_samples: Vec<(u64, Timestamp)>,
    cue_ts: BTreeMap<String, Timestamp>,
    inferences: BTreeMap<String, (AffectState, Vec<String>, InferenceSource)>,
    plans: Vec<PlanRow>,
    ratings: BTreeMap<String, Verdict>,
}

#[derive(Debug, Clone)]
struct PlanRow {
    seq: u64,
    id: String,
    plan_ts: Timestamp,
    act_ts: Timestamp,
    class: InterventionClass,
    inference_id: String,
    from_memory: bool,
    latency_ms: u64,
    max_ramp_s: Option<u32>,
}

impl SessionIndex {
    pub fn build(log: &SessionLog) -> Result<Self, MetricsError> {
        let mut ix = SessionIndex::default();
        let mut header = false;
        let mut prev_on = true;
        for r in log.records() {
            match &r.body {
                RecordBody::Session(m) => match &m.kind {
                    Marker::Header { participant, session_index, .. } => {
                        ix.participant = participant.clone();
                        ix.session_index = *session_index;
                        header = true;
                    }
                    Marker::Footer { .. } => ix.sealed = true,
                },
                RecordBody::Cue(c) => {
                    ix.cue_ts.insert(c.id.clone(), c.ts);
                    match &c.payload {
                        CuePayload::SelfReport { kind, value } => ix.reports.entry(*kind).or_default().push((r.seq, c.ts, *value)),
                        CuePayload::Behavior { gaze_on_screen, posture } => {
                            if !gaze_on_screen && prev_on {
                                ix.gaze_starts.push(c.ts);
                            }
                            prev_on = *gaze_on_screen;
                            if *posture == Posture::Upright {
                                ix.upright_samples.push((r.seq, c.ts));
                            }
                        }
                        CuePayload::Activity { domain_class: DomainClass::Work, .. } => ix.work_samples.push((r.seq, c.ts)),
                        _ => {}
                    }
                }
                RecordBody::Inference(i) => {
                    ix.inferences.insert(i.id.clone(), (i.state, i.source_cue_ids.clone(), i.backend));
                }
                RecordBody::Actuation(a) => ix.plans.push(PlanRow {
                    seq: r.seq,
                    id: a.plan.id.clone(),
                    plan_ts: a.plan.ts,
                    act_ts: a.ts,
                    class: a.plan.intervention_class,
                    inference_id: a.plan.inference_id.clone(),
                    from_memory: a.plan.from_memory,
                    latency_ms: a.latency_ms,
                    max_ramp_s: a
                        .plan
                        .commands
                        .iter()
                        .filter_map(|c| match c {
                            ActuatorCommand::Light { ramp_s, .. } => Some(*ramp_s),
                            _ => None,
                        })
                        .max(),
                }),
                RecordBody::Evaluation(e) => {
                    if let Evaluation::Rating { plan_id, verdict } = &e.kind {
                        ix.ratings.insert(plan_id.clone(), *verdict);
                    }
                }
            }
        }
        if !header {
            return Err(MetricsError::MissingHeader);
        }
        Ok(ix)
    }

    /// Report delta around the plan at `plan_seq`: first report of `kind`
    /// within the post window minus the last within the pre window.
    pub fn self_report_delta(&self, kind: ReportKind, plan_seq: u64, t: Timestamp, cfg: &MetricsConfig) -> Option<i32> {
        let reports = self.reports.get(&kind)?;
        let split = reports.partition_point(|(seq, _, _)| *seq < plan_seq);
        let (_, pre_ts, pre) = reports[..split].last()?;
        let (_, post_ts, post) = reports.get(split)?;
        let in_pre = t.ms().saturating_sub(pre_ts.ms()) <= cfg.report_pre_window_s * 1000;
        let in_post = post_ts.ms() <= t.ms() + cfg.report_post_window_s * 1000;
        (in_pre && in_post).then(|| i32::from(*post) - i32::from(*pre))
    }

    /// Off-screen run starts in `[t - w, t)` and `[t, t + w)`.
    pub fn gaze_off_counts(&self, t: Timestamp, cfg: &MetricsConfig) -> (usize, usize) {
        let w = cfg.gaze_window_s * 1000;
        let idx = |x: u64| self.gaze_starts.partition_point(|s| s.ms() < x);
        let lo = idx(t.ms().saturating_sub(w));
        let mid = idx(t.ms());
        let hi = idx(t.ms() + w);
        (mid - lo, hi - mid)
    }

    fn first_after(samples: &[(u64, Timestamp)], seq: u64) -> Option<Timestamp> {
        let i = samples.partition_point(|(s, _)| *s <= seq);
        samples.get(i).map(|(_, ts)| *ts)
    }

    fn recomputed_latency(&self, p: &PlanRow) -> Option<u64> {
        let (_, sources, _) = self.inferences.get(&p.inference_id)?;
        let trigger = sources.iter().filter_map(|id| self.cue_ts.get(id)).max()?;
        Some(p.act_ts.since(*trigger))
    }
}

pub fn gaze_off_reduction(pre: usize, post: usize) -> Option<f64> {
    (pre > 0).then(|| r3(100.0 * (pre as f64 - post as f64) / pre as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub session_index: u32,
    pub plan_id: String,
    pub intervention_class: InterventionClass,
    pub state: AffectState,
    pub ts: Timestamp,
    pub from_memory: bool,
    pub backend: InferenceSource,
    pub latency_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp_complete_ms: Option<u64>,
    pub rating: Option<Verdict>,
    pub focus_delta: Option<i32>,
    pub stress_delta: Option<i32>,
    pub alertness_delta: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaze_off_pre: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaze_off_post: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaze_off_reduction_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub return_to_work_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posture_recovery_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appropriateness {
    pub rated: usize,
    pub unrated: usize,
    pub helpful_pct: Option<f64>,
    pub intrusive_pct: Option<f64>,
    pub irrelevant_pct: Option<f64>,
    pub coverage_gap_pct: Option<f64>,
}

impl Appropriateness {
    pub fn of<'a>(ratings: impl Iterator<Item = &'a Option<Verdict>>) -> Self {
        let mut counts = [0usize; 3];
        let mut unrated = 0;
        for r in ratings {
            match r {
                Some(Verdict::Helpful) => counts[0] += 1,
                Some(Verdict::Intrusive) => counts[1] += 1,
                Some(Verdict::Irrelevant) => counts[2] += 1,
                None => unrated += 1,
            }
        }
        let rated = counts.iter().sum();
        Appropriateness {
            rated,
            unrated,
            helpful_pct: pct(counts[0], rated),
            intrusive_pct: pct(counts[1], rated),
            irrelevant_pct: pct(counts[2], rated),
            coverage_gap_pct: pct(unrated, rated + unrated),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub max_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrend {
    pub session_index: u32,
    pub plans: usize,
    pub eligible: usize,
    pub memory_hits: usize,
    pub memory_hit_rate: f64,
    pub recall_latency_ms: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub participant: String,
    pub sessions: Vec<u32>,
    pub plan_count: usize,
    pub plans: Vec<PlanMetrics>,
    pub appropriateness: Appropriateness,
    pub appropriateness_by_class: BTreeMap<InterventionClass, Appropriateness>,
    pub gaze_off_reduction_pct: Option<f64>,
    pub latency: Option<LatencyStats>,
    pub personalization_trend: Vec<SessionTrend>,
    pub personalization_nondecreasing: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<ThresholdOutcome>,
}

/// Report over sealed logs of one participant, in session order.
pub fn compute_report(logs: &[SessionLog], cfg: &MetricsConfig) -> Result<MetricsReport, MetricsError> {
    build_report(logs, cfg, true)
}

/// Like [`compute_report`] but accepts logs that are still open.
pub fn compute_partial_report(logs: &[SessionLog], cfg: &MetricsConfig) -> Result<MetricsReport, MetricsError> {
    build_report(logs, cfg, false)
}

fn build_report(logs: &[SessionLog], cfg: &MetricsConfig, require_sealed: bool) -> Result<MetricsReport, MetricsError> {
    if logs.is_empty() {
        return Err(MetricsError::NoLogs);
    }
    let mut sessions = logs.iter().map(SessionIndex::build).collect::<Result<Vec<_>, _>>()?;
    for s in &sessions[1..] {
        if s.participant != sessions[0].participant {
            return Err(MetricsError::ParticipantMismatch(sessions[0].participant.clone(), s.participant.clone()));
        }
    }
    sessions.sort_by_key(|s| s.session_index);
    if let Some(w) = sessions.windows(2).find(|w| w[0].session_index == w[1].session_index) {
        return Err(MetricsError::DuplicateSession(w[0].session_index));
    }
    if require_sealed {
        if let Some(s) = sessions.iter().find(|s| !s.sealed) {
            return Err(MetricsError::NotSealed(s.session_index));
        }
    }

    let mut plans = Vec::new();
    let mut trend = Vec::new();
    let mut seen_states: BTreeSet<AffectState> = BTreeSet::new();
    for s in &sessions {
        let mut t = SessionTrend {
            session_index: s.session_index,
            plans: s.plans.len(),
            eligible: 0,
            memory_hits: 0,
            memory_hit_rate: 0.0,
            recall_latency_ms: Vec::new(),
        };
        for p in &s.plans {
            let (state, _, backend) = s.inferences.get(&p.inference_id).cloned().unwrap_or((AffectState::Neutral, Vec::new(), InferenceSource::Oracle));
            let recomputed = s.recomputed_latency(p).unwrap_or(u64::MAX);
            if recomputed != p.latency_ms {
                return Err(MetricsError::LatencyMismatch {
                    session: s.session_index,
                    plan: p.id.clone(),
                    recorded: p.latency_ms,
                    recomputed,
                });
            }
            if !seen_states.insert(state) {
                t.eligible += 1;
                if p.from_memory {
                    t.memory_hits += 1;
                    t.recall_latency_ms.push(p.latency_ms);
                }
            }
            let focus = p.class == InterventionClass::FocusRestoration;
            let (pre, post) = s.gaze_off_counts(p.plan_ts, cfg);
            plans.push(PlanMetrics {
                session_index: s.session_index,
                plan_id: p.id.clone(),
                intervention_class: p.class,
                state,
                ts: p.act_ts,
                from_memory: p.from_memory,
                backend,
                latency_ms: p.latency_ms,
                ramp_complete_ms: p.max_ramp_s.map(|r| p.latency_ms + u64::from(r) * 1000),
                rating: s.ratings.get(&p.id).copied(),
                focus_delta: s.self_report_delta(ReportKind::Focus, p.seq, p.plan_ts, cfg),
                stress_delta: s.self_report_delta(ReportKind::Stress, p.seq, p.plan_ts, cfg),
                alertness_delta: s.self_report_delta(ReportKind::Alertness, p.seq, p.plan_ts, cfg),
                gaze_off_pre: focus.then_some(pre),
                gaze_off_post: focus.then_some(post),
                gaze_off_reduction_pct: if focus { gaze_off_reduction(pre, post) } else { None },
                return_to_work_s: (p.class == InterventionClass::DistractionMitigation)
                    .then(|| SessionIndex::first_after(&s.work_samples, p.seq).map(|ts| secs(ts.since(p.act_ts))))
                    .flatten(),
                posture_recovery_s: (p.class == InterventionClass::DrowsinessRecovery)
                    .then(|| SessionIndex::first_after(&s.upright_samples, p.seq).map(|ts| secs(ts.since(p.act_ts))))
                    .flatten(),
            });
        }
        if t.eligible > 0 {
            t.memory_hit_rate = r3(t.memory_hits as f64 / t.eligible as f64);
        }
        trend.push(t);
    }

    let mut latencies: Vec<u64> = plans.iter().map(|p| p.latency_ms).collect();
    latencies.sort_unstable();
    let latency = percentile(&latencies, 50.0).map(|p50| LatencyStats {
        p50_ms: p50,
        p95_ms: percentile(&latencies, 95.0).expect("non-empty"),
        max_ms: *latencies.last().expect("non-empty"),
    });
    let (pre_sum, post_sum) = plans
        .iter()
        .filter(|p| p.gaze_off_pre.is_some_and(|n| n > 0))
        .fold((0, 0), |(a, b), p| (a + p.gaze_off_pre.unwrap_or(0), b + p.gaze_off_post.unwrap_or(0)));
    let by_class = InterventionClass::ALL
        .iter()
        .filter(|c| plans.iter().any(|p| p.intervention_class == **c))
        .map(|c| (*c, Appropriateness::of(plans.iter().filter(|p| p.intervention_class == *c).map(|p| &p.rating))))
        .collect();

    Ok(MetricsReport {
        participant: sessions[0].participant.clone(),
        sessions: sessions.iter().map(|s| s.session_index).collect(),
        plan_count: plans.len(),
        appropriateness: Appropriateness::of(plans.iter().map(|p| &p.rating)),
        appropriateness_by_class: by_class,
        gaze_off_reduction_pct: gaze_off_reduction(pre_sum, post_sum),
        latency,
        personalization_nondecreasing: trend.windows(2).all(|w| w[1].memory_hit_rate >= w[0].memory_hit_rate),
        personalization_trend: trend,
        plans,
        thresholds: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "==")]
    Eq,
}

impl Op {
    pub fn holds(self, x: f64, v: f64) -> bool {
        match self {
            Op::Ge => x >= v,
            Op::Le => x <= v,
            Op::Gt => x > v,
            Op::Lt => x < v,
            Op::Eq => (x - v).abs() < 1e-9,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Ge => ">=",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Lt => "<",
            Op::Eq => "==",
        }
    }
}

/// A pass/fail condition over one report metric. Holds when the metric has
/// at least one observation and every observation satisfies `op value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<InterventionClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_session: Option<u32>,
    pub op: Op,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOutcome {
    #[serde(flatten)]
    pub threshold: Threshold,
    pub observed: Vec<f64>,
    pub pass: bool,
}

pub const THRESHOLD_METRICS: &[&str] = &[
    "helpful_pct",
    "intrusive_pct",
    "irrelevant_pct",
    "gaze_off_reduction_pct",
    "gaze_off_reduction_plan_pct",
    "latency_max_ms",
    "latency_p95_ms",
    "latency_p50_ms",
    "alertness_delta",
    "focus_delta",
    "stress_delta",
    "return_to_work_s",
    "posture_recovery_s",
    "memory_hit_rate",
    "recall_latency_ms",
    "recall_from_memory",
    "personalization_nondecreasing",
    "plan_count",
];

impl Threshold {
    pub fn validate(&self) -> Result<(), String> {
        if THRESHOLD_METRICS.contains(&self.metric.as_str()) {
            Ok(())
        } else {
            Err(format!("unknown metric `{}`", self.metric))
        }
    }

    /// Observations of the metric in `report`, after class and session filters.
    pub fn observe(&self, report: &MetricsReport) -> Vec<f64> {
        let plans: Vec<&PlanMetrics> = report
            .plans
            .iter()
            .filter(|p| self.class.is_none_or(|c| p.intervention_class == c))
            .filter(|p| self.from_session.is_none_or(|s| p.session_index >= s))
            .collect();
        let per_plan = |f: &dyn Fn(&PlanMetrics) -> Option<f64>| plans.iter().filter_map(|p| f(p)).collect::<Vec<_>>();
        let ratings = || Appropriateness::of(plans.iter().map(|p| &p.rating));
        let opt = |x: Option<f64>| x.into_iter().collect::<Vec<_>>();
        let lat: Vec<u64> = {
            let mut v: Vec<u64> = plans.iter().map(|p| p.latency_ms).collect();
            v.sort_unstable();
            v
        };
        match self.metric.as_str() {
            "helpful_pct" => opt(ratings().helpful_pct),
            "intrusive_pct" => opt(ratings().intrusive_pct),
            "irrelevant_pct" => opt(ratings().irrelevant_pct),
            "gaze_off_reduction_pct" => {
                let (a, b) = plans
                    .iter()
                    .filter(|p| p.gaze_off_pre.is_some_and(|n| n > 0))
                    .fold((0, 0), |(a, b), p| (a + p.gaze_off_pre.unwrap_or(0), b + p.gaze_off_post.unwrap_or(0)));
                opt(gaze_off_reduction(a, b))
            }
            "gaze_off_reduction_plan_pct" => per_plan(&|p| p.gaze_off_reduction_pct),
            "latency_max_ms" => opt(lat.last().map(|x| *x as f64)),
            "latency_p95_ms" => opt(percentile(&lat, 95.0).map(|x| x as f64)),
            "latency_p50_ms" => opt(percentile(&lat, 50.0).map(|x| x as f64)),
            "alertness_delta" => per_plan(&|p| p.alertness_delta.map(f64::from)),
            "focus_delta" => per_plan(&|p| p.focus_delta.map(f64::from)),
            "stress_delta" => per_plan(&|p| p.stress_delta.map(f64::from)),
            "return_to_work_s" => per_plan(&|p| p.return_to_work_s),
            "posture_recovery_s" => per_plan(&|p| p.posture_recovery_s),
            "recall_latency_ms" => per_plan(&|p| p.from_memory.then_some(p.latency_ms as f64)),
            "recall_from_memory" => per_plan(&|p| Some(if p.from_memory { 1.0 } else { 0.0 })),
            "plan_count" => vec![plans.len() as f64],
            "memory_hit_rate" => report
                .personalization_trend
                .iter()
                .filter(|t| self.from_session.is_none_or(|s| t.session_index >= s))
                .map(|t| t.memory_hit_rate)
                .collect(),
            "personalization_nondecreasing" => vec![if report.personalization_nondecreasing { 1.0 } else { 0.0 }],
            _ => Vec::new(),
        }
    }

    pub fn evaluate(&self, report: &MetricsReport) -> ThresholdOutcome {
        let observed = self.observe(report);
        let pass = !observed.is_empty() && observed.iter().all(|x| self.op.holds(*x, self.value));
        ThresholdOutcome { threshold: self.clone(), observed, pass }
    }

    pub fn describe(&self) -> String {
        let mut s = self.metric.clone();
        if let Some(c) = self.class {
            let _ = write!(s, "[{c}]");
        }
        if let Some(n) = self.from_session {
            let _ = write!(s, "[s>={n}]");
        }
        format!("{s} {} {}", self.op.symbol(), self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Table,
    Csv,
}

/// Deterministic pretty JSON, newline terminated.
pub fn render_json(report: &MetricsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

pub fn render_table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let a = &report.appropriateness;
    let _ = writeln!(s, "participant {}  sessions {:?}  plans {}", report.participant, report.sessions, report.plan_count);
    let _ = writeln!(
        s,
        "ratings: helpful {}%  intrusive {}%  irrelevant {}%  unrated {}",
        opt(a.helpful_pct),
        opt(a.intrusive_pct),
        opt(a.irrelevant_pct),
        a.unrated
    );
    let _ = writeln!(s, "gaze-off reduction (aggregate): {}%", opt(report.gaze_off_reduction_pct));
    if let Some(l) = &report.latency {
        let _ = writeln!(s, "latency ms: p50 {}  p95 {}  max {}", l.p50_ms, l.p95_ms, l.max_ms);
    }
    for t in &report.personalization_trend {
        let _ = writeln!(
            s,
            "session {}: plans {}  memory hits {}/{}  hit rate {}",
            t.session_index, t.plans, t.memory_hits, t.eligible, t.memory_hit_rate
        );
    }
    let _ = writeln!(
        s,
        "\n{:<4} {:<9} {:<23} {:<3} {:>7} {:<10} {:>5} {:>5} {:>5} {:>8} {:>7} {:>7}",
        "s", "plan", "class", "mem", "lat_ms", "rating", "foc", "str", "alr", "gaze_red", "rtw_s", "post_s"
    );
    for p in &report.plans {
        let _ = writeln!(
            s,
            "{:<4} {:<9} {:<23} {:<3} {:>7} {:<10} {:>5} {:>5} {:>5} {:>8} {:>7} {:>7}",
            p.session_index,
            p.plan_id,
            p.intervention_class.as_str(),
            if p.from_memory { "yes" } else { "no" },
            p.latency_ms,
            opt(p.rating),
            opt(p.focus_delta),
            opt(p.stress_delta),
            opt(p.alertness_delta),
            opt(p.gaze_off_reduction_pct),
            opt(p.return_to_work_s),
            opt(p.posture_recovery_s)
        );
    }
    for t in &report.thresholds {
        let _ = writeln!(s, "{} {}", if t.pass { "PASS" } else { "FAIL" }, t.threshold.describe());
    }
    s
}

pub fn render_csv(report: &MetricsReport) -> String {
    let blank = |x: Option<String>| x.unwrap_or_default();
    let mut s = String::from(
        "session_index,plan_id,intervention_class,state,ts,from_memory,backend,latency_ms,ramp_complete_ms,rating,\
         focus_delta,stress_delta,alertness_delta,gaze_off_pre,gaze_off_post,gaze_off_reduction_pct,return_to_work_s,posture_recovery_s\n",
    );
    for p in &report.plans {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.session_index,
            p.plan_id,
            p.intervention_class,
            p.state,
            p.ts.ms(),
            p.from_memory,
            p.backend,
            p.latency_ms,
            blank(p.ramp_complete_ms.map(|x| x.to_string())),
            blank(p.rating.map(|x| x.to_string())),
            blank(p.focus_delta.map(|x| x.to_string())),
            blank(p.stress_delta.map(|x| x.to_string())),
            blank(p.alertness_delta.map(|x| x.to_string())),
            blank(p.gaze_off_pre.map(|x| x.to_string())),
            blank(p.gaze_off_post.map(|x| x.to_string())),
            blank(p.gaze_off_reduction_pct.map(|x| x.to_string())),
            blank(p.return_to_work_s.map(|x| x.to_string())),
            blank(p.posture_recovery_s.map(|x| x.to_string())),
        );
    }
    s
}

pub fn render(report: &MetricsReport, format: Format) -> String {
    match format {
        Format::Json => render_json(report),
        Format::Table => render_table(report),
        Format::Csv => render_csv(report),
    }
}

pub mod oracles {
    //! Linear scans over raw records, independent of [`SessionIndex`].

    use super::*;
    use crate::model::LogRecord;

    pub fn self_report_delta(records: &[LogRecord], kind: ReportKind, plan_seq: u64, t: u64, pre_w: u64, post_w: u64) -> Option<i32> {
        let reports: Vec<(u64, u64, u8)> = records
            .iter()
            .filter_map(|r| match &r.body {
                RecordBody::Cue(c) => match c.payload {
                    CuePayload::SelfReport { kind: k, value } if k == kind => Some((r.seq, c.ts.ms(), value)),
                    _ => None,
                },
                _ => None,
            })
            .collect();
        let pre = reports.iter().rfind(|(seq, _, _)| *seq < plan_seq)?;
        let post = reports.iter().find(|(seq, _, _)| *seq > plan_seq)?;
        (pre.1 + pre_w >= t && post.1 <= t + post_w).then(|| i32::from(post.2) - i32::from(pre.2))
    }

    pub fn gaze_off_counts(records: &[LogRecord], t: u64, w: u64) -> (usize, usize) {
        let mut prev_on = true;
        let (mut pre, mut post) = (0, 0);
        for r in records {
            if let RecordBody::Cue(c) = &r.body {
                if let CuePayload::Behavior { gaze_on_screen, .. } = c.payload {
                    if !gaze_on_screen && prev_on {
                        let ts = c.ts.ms();
                        if ts < t && ts + w >= t {
                            pre += 1;
                        }
                        if ts >= t && ts < t + w {
                            post += 1;
                        }
                    }
                    prev_on = gaze_on_screen;
                }
            }
        }
        (pre, post)
    }
}
