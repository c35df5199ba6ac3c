//! Runs the cue detectors over a hand-built stream: a 12 s off-screen run,
//! two long social visits and a lexicon-routed utterance.

use workpod::detect::{debounce, detect_distraction, detect_gaze_off, route_utterance, DetectorConfig};
use workpod::model::{CueEvent, CuePayload, DomainClass, Posture, Timestamp};

fn cue(seq: u64, ts_s: u64, payload: CuePayload) -> CueEvent {
    CueEvent { id: format!("cue-{seq}"), ts: Timestamp::from_secs(ts_s), payload }
}

fn main() {
    let cfg = DetectorConfig::default();
    let mut stream = Vec::new();
    for s in 0..30 {
        let on = !(5..17).contains(&s);
        stream.push(cue(stream.len() as u64 + 1, s, CuePayload::Behavior { gaze_on_screen: on, posture: Posture::Upright }));
    }
    for (ts, span) in [(400, 320), (800, 310)] {
        stream.push(cue(stream.len() as u64 + 1, ts, CuePayload::Activity { domain_class: DomainClass::Social, visit_span_s: span }));
    }

    let gaze = detect_gaze_off(&stream, &cfg);
    let social = detect_distraction(&stream, &cfg);
    for t in gaze.iter().chain(&social) {
        println!("{:?} at {} citing {} cues", t.kind, t.ts, t.source_cue_ids.len());
    }
    let mut all: Vec<_> = gaze.into_iter().chain(social).collect();
    all.sort_by_key(|t| t.ts);
    println!("{} trigger(s) survive the {} s cooldown", debounce(&all, &cfg).len(), cfg.cooldown_s);

    for text in ["I'm feeling a bit drowsy.", "This task is stressing me out.", "Lunch was fine."] {
        println!("{text:?} routes to {:?}", route_utterance(text));
    }
}
