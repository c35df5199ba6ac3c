//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the test harness so the lines always print.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde_json::{json, Value};

use workpod::detect::{self, DetectorConfig, TriggerCue};
use workpod::mediation::llm::{BackendError, ChatRequest};
use workpod::mediation::memory::PersonalizationMemory;
use workpod::mediation::response::parse_response;
use workpod::mediation::{MediationConfig, Mediator, WorkflowTable};
use workpod::metrics::{self, compute_report, MetricsConfig, MetricsReport, ThresholdOutcome};
use workpod::model::{
    AffectState, CueEvent, CuePayload, DomainClass, InferenceSource, Posture, RecordBody, ReportKind, SessionLog, Timestamp,
    Verdict,
};
use workpod::replay::{replay, ReplayOptions, ReplayOutcome};
use workpod::session::{CueInput, Runtime, Session, SessionConfig};
use workpod::simuser::{load_scenario, ScenarioScript};

const CASES: usize = 100;
const FUZZ_CASES: usize = 500;

fn root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn scenario(name: &str) -> ScenarioScript {
    load_scenario(root().join(format!("scenarios/{name}.jsonl"))).expect("bundled scenario parses")
}

fn delayed() -> ReplayOptions {
    ReplayOptions { actuator_delay_ms: 100, ..ReplayOptions::default() }
}

fn run(name: &str, opts: &ReplayOptions) -> (ReplayOutcome, Duration) {
    let started = Instant::now();
    let out = replay(&scenario(name), opts, None).expect("replay runs");
    (out, started.elapsed())
}

/// Observed values of the scenario threshold on `metric`, and whether it passed.
fn threshold<'r>(report: &'r MetricsReport, metric: &str) -> &'r ThresholdOutcome {
    report.thresholds.iter().find(|t| t.threshold.metric == metric).unwrap_or_else(|| panic!("scenario declares `{metric}`"))
}

fn summarize(t: &ThresholdOutcome) -> String {
    format!("{} observed {:?}", t.threshold.describe(), t.observed)
}

struct Verdicts(Vec<(String, bool, String)>);

impl Verdicts {
    fn record(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        let detail = detail.into();
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.0.push((name.to_string(), pass, detail));
    }
}

fn workflow_1(v: &mut Verdicts) {
    let (out, took) = run("s1-drowsiness", &delayed());
    let alert = threshold(&out.report, "alertness_delta");
    let posture = threshold(&out.report, "posture_recovery_s");
    let fast = took < Duration::from_secs(5);
    v.record(
        "workflow-1 drowsiness (S1)",
        alert.pass && posture.pass && fast,
        format!("{}; {}; runtime {:.2?} (< 5 s)", summarize(alert), summarize(posture), took),
    );
}

fn workflow_2(v: &mut Verdicts) {
    let (out, took) = run("s2-focus", &delayed());
    let reduction = threshold(&out.report, "gaze_off_reduction_pct");
    let latency = out.report.latency.as_ref().map(|l| l.max_ms);
    let latency_ok = latency.is_some_and(|ms| ms < 1000);

    let (mut intrusive, mut rated) = (0usize, 0usize);
    for name in ["s1-drowsiness", "s2-focus", "s3-distraction", "s4-stress"] {
        let (o, _) = run(name, &delayed());
        for p in &o.report.plans {
            if let Some(r) = p.rating {
                rated += 1;
                intrusive += usize::from(r == Verdict::Intrusive);
            }
        }
    }
    let intrusive_pct = 100.0 * intrusive as f64 / rated.max(1) as f64;
    let fast = took < Duration::from_secs(10);
    v.record(
        "workflow-2 focus (S2)",
        reduction.pass && latency_ok && rated > 0 && intrusive_pct < 10.0 && fast,
        format!(
            "{}; latency max {latency:?} ms with 100 ms actuator delay (< 1000); intrusive {intrusive}/{rated} = {intrusive_pct:.1}% over S1-S4 (< 10%); runtime {took:.2?} (< 10 s)",
            summarize(reduction)
        ),
    );
}

fn workflow_3(v: &mut Verdicts) {
    let (out, _) = run("s3-distraction", &delayed());
    let rtw = threshold(&out.report, "return_to_work_s");
    let focus = threshold(&out.report, "focus_delta");
    let helpful = threshold(&out.report, "helpful_pct");
    v.record(
        "workflow-3 distraction (S3)",
        rtw.pass && focus.pass && helpful.pass,
        format!("{}; {}; {}", summarize(rtw), summarize(focus), summarize(helpful)),
    );
}

fn workflow_4(v: &mut Verdicts) {
    let (out, _) = run("s5-personalization", &delayed());
    let stress = threshold(&out.report, "stress_delta");
    let later: Vec<_> = out.report.plans.iter().filter(|p| p.session_index >= 2).collect();
    let recalled = later.len() == 3 && later.iter().all(|p| p.from_memory && p.backend == InferenceSource::Memory);
    let quick = later.iter().all(|p| p.latency_ms < 10_000);
    let rates: Vec<f64> = out.report.personalization_trend.iter().map(|s| s.memory_hit_rate).collect();
    let nondecreasing = rates.windows(2).all(|w| w[0] <= w[1]);
    let latencies: Vec<u64> = later.iter().map(|p| p.latency_ms).collect();
    v.record(
        "workflow-4 stress + personalization (S5)",
        out.passed && stress.pass && recalled && quick && nondecreasing,
        format!(
            "{}; sessions 2-4 from_memory={recalled} latency {latencies:?} ms (< 10000); hit rates {rates:?} non-decreasing={nondecreasing}",
            summarize(stress)
        ),
    );
}

fn discriminative_control(v: &mut Verdicts) {
    let status = Command::new(env!("CARGO_BIN_EXE_workpod"))
        .args(["replay", "--profile", "non_responsive", "--actuator-delay-ms", "100", "--format", "json", "--scenario"])
        .arg(root().join("scenarios/s2-focus.jsonl"))
        .output()
        .expect("workpod binary runs");
    let report: MetricsReport = serde_json::from_slice(&status.stdout).expect("report on stdout");
    let reduction = threshold(&report, "gaze_off_reduction_pct");
    let code = status.status.code();
    v.record(
        "discriminative control (S2 non-responsive)",
        code == Some(1) && !reduction.pass,
        format!("exit code {code:?} (want 1); {}", summarize(reduction)),
    );
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let p = e.expect("dir entry").path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("readable"))
        })
        .collect()
}

fn determinism(v: &mut Verdicts) {
    let mut failures = Vec::new();
    let mut files = 0;
    for name in ["s1-drowsiness", "s2-focus", "s3-distraction", "s4-stress", "s5-personalization"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        replay(&scenario(name), &delayed(), Some(a.path())).unwrap();
        replay(&scenario(name), &delayed(), Some(b.path())).unwrap();
        let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
        files += fa.len();
        if fa != fb {
            failures.push(name);
        }
    }
    v.record(
        "determinism",
        failures.is_empty(),
        format!("{files} files across 5 scenarios byte-identical on rerun; mismatches {failures:?}"),
    );
}

fn rng(case: usize, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(salt ^ (case as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn below(r: &mut ChaCha8Rng, n: u64) -> u64 {
    r.next_u64() % n
}

/// A cue stream of at most 1000 samples mixing behavior and activity.
fn random_stream(r: &mut ChaCha8Rng) -> Vec<CueEvent> {
    let n = 1 + below(r, 1000) as usize;
    let mut ts = 0;
    let mut on = true;
    (0..n)
        .map(|i| {
            ts += 200 + below(r, 2_000);
            let payload = if below(r, 10) == 0 {
                let domain = if below(r, 3) == 0 { DomainClass::Work } else { DomainClass::Social };
                CuePayload::Activity { domain_class: domain, visit_span_s: 1 + below(r, 600) as u32 }
            } else {
                if below(r, 8) == 0 {
                    on = !on;
                }
                CuePayload::Behavior { gaze_on_screen: on, posture: Posture::Upright }
            };
            CueEvent { id: format!("cue-{}", i + 1), ts: Timestamp(ts), payload }
        })
        .collect()
}

fn as_pairs(ts: &[TriggerCue]) -> Vec<(Timestamp, Vec<String>)> {
    ts.iter().map(|t| (t.ts, t.source_cue_ids.clone())).collect()
}

/// A sealed session of at most 1000 ingested cues with plans, reports and gaze runs.
fn random_session(r: &mut ChaCha8Rng) -> SessionLog {
    let mut s = Session::start(SessionConfig::new("p09", 1), &Runtime::default()).unwrap();
    let n = 1 + below(r, 1000);
    let mut ts = 0;
    let mut on = true;
    let utterances = ["This task is stressing me out.", "I'm feeling a bit drowsy.", "I can't focus at all.", "Fine."];
    for _ in 0..n {
        ts += below(r, 30_000);
        let payload = match below(r, 20) {
            0 => CuePayload::Utterance { text: utterances[below(r, 4) as usize].into(), hint: None },
            1..=3 => CuePayload::SelfReport { kind: ReportKind::ALL[below(r, 3) as usize], value: 1 + below(r, 5) as u8 },
            _ => {
                if below(r, 4) == 0 {
                    on = !on;
                }
                CuePayload::Behavior { gaze_on_screen: on, posture: Posture::Upright }
            }
        };
        s.ingest(CueInput::new(Timestamp(ts), payload)).unwrap();
    }
    s.end(Timestamp(ts)).unwrap();
    s.log().clone()
}

fn oracle_equivalence(v: &mut Verdicts) {
    let cfg = DetectorConfig::default();
    let mut mismatches = Vec::new();
    let mut triggers = 0;
    for case in 0..CASES {
        let stream = random_stream(&mut rng(case, 1));
        let gaze = detect::detect_gaze_off(&stream, &cfg);
        let social = detect::detect_distraction(&stream, &cfg);
        triggers += gaze.len() + social.len();
        if as_pairs(&gaze) != detect::oracles::gaze_off(&stream, cfg.gaze_off_threshold_s) {
            mismatches.push(format!("gaze case {case}"));
        }
        if as_pairs(&social) != detect::oracles::distraction(&stream, cfg.social_visit_min_s, cfg.social_visit_count) {
            mismatches.push(format!("distraction case {case}"));
        }
        let mut all: Vec<TriggerCue> = gaze.into_iter().chain(social).collect();
        all.sort_by_key(|t| t.ts);
        if detect::debounce(&all, &cfg) != detect::oracles::debounce(&all, cfg.cooldown_s) {
            mismatches.push(format!("debounce case {case}"));
        }
    }

    let mcfg = MetricsConfig::default();
    let (pre_w, post_w, gaze_w) = (mcfg.report_pre_window_s * 1000, mcfg.report_post_window_s * 1000, mcfg.gaze_window_s * 1000);
    let mut plans = 0;
    for case in 0..CASES {
        let log = random_session(&mut rng(case, 2));
        let report = compute_report(std::slice::from_ref(&log), &mcfg).unwrap();
        for r in log.records() {
            let RecordBody::Actuation(a) = &r.body else { continue };
            plans += 1;
            let got = report.plans.iter().find(|p| p.plan_id == a.plan.id).expect("plan in report");
            let t = a.plan.ts.ms();
            let want = |kind| metrics::oracles::self_report_delta(log.records(), kind, r.seq, t, pre_w, post_w);
            let (pre, post) = metrics::oracles::gaze_off_counts(log.records(), t, gaze_w);
            let deltas_ok = got.stress_delta == want(ReportKind::Stress)
                && got.focus_delta == want(ReportKind::Focus)
                && got.alertness_delta == want(ReportKind::Alertness);
            let gaze_ok = got.gaze_off_pre.is_none_or(|g| g == pre) && got.gaze_off_post.is_none_or(|g| g == post);
            if !(deltas_ok && gaze_ok) {
                mismatches.push(format!("metrics case {case} {}", a.plan.id));
            }
        }
    }
    v.record(
        "oracle equivalence",
        mismatches.is_empty() && triggers > 0 && plans > 0,
        format!(
            "{CASES} detector streams ({triggers} triggers) and {CASES} sessions ({plans} plans) match brute force; mismatches {mismatches:?}"
        ),
    );
}

fn scan(dir: &Path, needles: &[&str]) -> Vec<String> {
    let mut hits = Vec::new();
    for (name, bytes) in dir_bytes(dir) {
        let text = String::from_utf8_lossy(&bytes);
        for n in needles {
            if text.contains(n) {
                hits.push(format!("{name}: {n:?}"));
            }
        }
    }
    hits
}

fn privacy(v: &mut Verdicts) {
    let mut leaks = Vec::new();
    let mut differing = Vec::new();
    let mut scanned = 0;
    for name in ["s1-drowsiness", "s2-focus", "s3-distraction", "s4-stress", "s5-personalization"] {
        let script = scenario(name);
        let needles: Vec<&str> = script.utterances().collect();
        let open = tempfile::tempdir().unwrap();
        let closed = tempfile::tempdir().unwrap();
        let a = replay(&script, &delayed(), Some(open.path())).unwrap();
        let b = replay(&script, &ReplayOptions { store_raw_utterances: false, ..delayed() }, Some(closed.path())).unwrap();
        scanned += dir_bytes(closed.path()).len();
        leaks.extend(scan(closed.path(), &needles));
        if a.report != b.report
            || std::fs::read(open.path().join("report.json")).unwrap() != std::fs::read(closed.path().join("report.json")).unwrap()
        {
            differing.push(name);
        }
        if !needles.is_empty() && scan(open.path(), &needles).is_empty() {
            leaks.push(format!("{name}: consented run lacks its utterances, so the scan proves nothing"));
        }
    }
    v.record(
        "privacy",
        leaks.is_empty() && differing.is_empty(),
        format!("{scanned} files scanned with consent withheld; leaks {leaks:?}; reports differing from consented run {differing:?}"),
    );
}

fn engine_overhead(v: &mut Verdicts) {
    let mut s = Session::start(SessionConfig::new("p10", 1), &Runtime::default()).unwrap();
    let mut r = rng(0, 3);
    let mut samples = Vec::with_capacity(10_000);
    let mut on = true;
    for i in 0..10_000u64 {
        let ts = Timestamp(i * 1000);
        let payload = match i % 500 {
            100 => CuePayload::Utterance { text: "This task is stressing me out.".into(), hint: None },
            250 => CuePayload::SelfReport { kind: ReportKind::Focus, value: 3 },
            400 => CuePayload::Activity { domain_class: DomainClass::Social, visit_span_s: 320 },
            _ => {
                if below(&mut r, 12) == 0 {
                    on = !on;
                }
                CuePayload::Behavior { gaze_on_screen: on, posture: Posture::Upright }
            }
        };
        let started = Instant::now();
        s.ingest(CueInput::new(ts, payload)).unwrap();
        samples.push(started.elapsed().as_micros() as u64);
    }
    samples.sort_unstable();
    let p95 = metrics::percentile(&samples, 95.0).unwrap();
    let max = *samples.last().unwrap();
    let plans = s.log().records().iter().filter(|r| matches!(r.body, RecordBody::Actuation(_))).count();
    v.record(
        "engine overhead",
        p95 < 50_000,
        format!("10000 ingests, {plans} plans: p95 {p95} us, max {max} us (p95 < 50000 us)"),
    );
}

fn valid_response(r: &mut ChaCha8Rng) -> Value {
    let states = [AffectState::Stressed, AffectState::Drowsy, AffectState::FocusLoss, AffectState::Distracted];
    let state = states[below(r, 4) as usize];
    let (class, commands) = WorkflowTable::new(MediationConfig::default().presets).plan_for(state).unwrap();
    json!({
        "state": state.as_str(),
        "confidence": below(r, 1001) as f64 / 1000.0,
        "rationale": "the occupant's cues match this state",
        "intervention_class": class.as_str(),
        "commands": commands,
    })
}

/// One invalidating mutation of a valid response, as backend text.
fn mutant(case: usize) -> String {
    let r = &mut rng(case, 4);
    let mut v = valid_response(r);
    let keys = ["state", "confidence", "rationale", "intervention_class", "commands"];
    let pick = |r: &mut ChaCha8Rng, n: usize| below(r, n as u64) as usize;
    let n_cmds = v["commands"].as_array().unwrap().len();
    let cmd = pick(r, n_cmds);
    match case % 20 {
        0 => {
            v.as_object_mut().unwrap().remove(keys[pick(r, 5)]);
        }
        1 => v[format!("extra_{}", below(r, 1000))] = json!(true),
        2 => v["state"] = json!(["ecstatic", "angry", "", "STRESSED"][pick(r, 4)]),
        3 => v["state"] = [json!(1), Value::Null, json!({"s": 1}), json!(true)][pick(r, 4)].clone(),
        4 => v["confidence"] = json!(1.0 + (1 + below(r, 1000)) as f64 / 100.0),
        5 => v["confidence"] = [json!(-0.01), json!("0.8"), Value::Null, json!([0.5])][pick(r, 4)].clone(),
        6 => v["rationale"] = [json!(""), json!("   "), json!("x".repeat(501 + pick(r, 100))), json!(7)][pick(r, 4)].clone(),
        7 => {
            let wrong = ["drowsiness_recovery", "focus_restoration", "distraction_mitigation", "stress_alleviation"]
                .into_iter()
                .filter(|c| Some(*c) != v["intervention_class"].as_str())
                .nth(pick(r, 3))
                .unwrap();
            v["intervention_class"] = json!(wrong);
        }
        8 => v["intervention_class"] = [Value::Null, json!("nap_time"), json!(3)][pick(r, 3)].clone(),
        9 => v["commands"] = [json!([]), json!({}), json!("light"), Value::Null][pick(r, 4)].clone(),
        10 => v["commands"][cmd]["type"] = json!(["hvac", "scent", "", "LIGHT"][pick(r, 4)]),
        11 => v["commands"][cmd][format!("x{}", below(r, 100))] = json!(1),
        12 => v["commands"][cmd] = json!({"type":"light","brightness_pct": 101 + below(r, 200),"color_temp_k":4000,"ramp_s":0}),
        13 => {
            let k = if below(r, 2) == 0 { 1499 - below(r, 1000) } else { 8001 + below(r, 5000) };
            v["commands"][cmd] = json!({"type":"light","brightness_pct":50,"color_temp_k":k,"ramp_s":0});
        }
        14 => {
            let mode = ["loud", "jazz", ""][pick(r, 3)];
            v["commands"][cmd] = json!({"type":"sound","mode":mode});
        }
        15 => v["commands"][cmd] = json!({"type":"screen","mode":"block_social","duration_s":0}),
        16 => v["commands"][cmd] = json!({"type":"prompt","text":"","duration_s":60,"modality":"voice"}),
        17 => {
            v["state"] = json!("neutral");
            v["intervention_class"] = Value::Null;
        }
        18 => {
            let text = v.to_string();
            let cut = 1 + pick(r, text.len() - 1);
            return text[..cut].to_string();
        }
        _ => {
            let text = v.to_string();
            return [format!("{text}\n{text}"), "state: stressed, confidence 0.9".to_string(), String::new()][pick(r, 3)].clone();
        }
    }
    if below(r, 2) == 0 {
        format!("Here you go:\n```json\n{v}\n```")
    } else {
        v.to_string()
    }
}

fn contract_hardening(v: &mut Verdicts) {
    let mut accepted = Vec::new();
    let mut bad_fallbacks = Vec::new();
    let oracle = Mediator::oracle(MediationConfig::default());
    let memory = PersonalizationMemory::new("p11");
    let cue = CueEvent {
        id: "cue-1".into(),
        ts: Timestamp(5_000),
        payload: CuePayload::Utterance { text: "This task is stressing me out.".into(), hint: Some(AffectState::Stressed) },
    };
    let trigger = TriggerCue::lexical(&cue, "This task is stressing me out.", Some(AffectState::Stressed)).unwrap();
    let expected = oracle.infer_oracle(&trigger, &memory).unwrap();

    for case in 0..FUZZ_CASES {
        let text = mutant(case);
        let caught = std::panic::catch_unwind(|| parse_response(&text));
        match caught {
            Ok(Err(_)) => {}
            Ok(Ok(_)) => accepted.push(format!("case {case} accepted")),
            Err(_) => accepted.push(format!("case {case} panicked")),
        }
        let reply = Arc::new(move |_: &ChatRequest| -> Result<String, BackendError> { Ok(text.clone()) });
        let mediator = Mediator::with_backend(MediationConfig::default(), reply);
        match mediator.infer_llm(&trigger, &memory, &[]) {
            Ok(m) if m.source == InferenceSource::Oracle
                && m.fallback_reason.is_some()
                && m.response == expected.response
                && workpod::mediation::response::validate_response_value(&m.response.to_value()).is_ok() => {}
            other => bad_fallbacks.push(format!("case {case}: {other:?}")),
        }
    }
    v.record(
        "contract hardening",
        accepted.is_empty() && bad_fallbacks.is_empty(),
        format!(
            "{FUZZ_CASES} mutants: {} rejected, {} fell back to a valid oracle plan; failures {:?}",
            FUZZ_CASES - accepted.len(),
            FUZZ_CASES - bad_fallbacks.len(),
            accepted.iter().chain(&bad_fallbacks).take(5).collect::<Vec<_>>()
        ),
    );
}

type Check = (&'static str, fn(&mut Verdicts));

fn main() {
    let mut v = Verdicts(Vec::new());
    let checks: [Check; 10] = [
        ("workflow-1", workflow_1),
        ("workflow-2", workflow_2),
        ("workflow-3", workflow_3),
        ("workflow-4", workflow_4),
        ("control", discriminative_control),
        ("determinism", determinism),
        ("oracles", oracle_equivalence),
        ("privacy", privacy),
        ("overhead", engine_overhead),
        ("contract", contract_hardening),
    ];
    for (name, check) in checks {
        if std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut v))).is_err() {
            v.record(name, false, "criterion panicked");
        }
    }
    let failed: Vec<&str> = v.0.iter().filter(|(_, pass, _)| !pass).map(|(n, _, _)| n.as_str()).collect();
    println!("acceptance: {} of {} criteria passed", v.0.len() - failed.len(), v.0.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
