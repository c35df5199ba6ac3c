//! Records chat-completion fixtures for every bundled scenario, then replays
//! one scenario through the `llm` route without touching the network.
//!
//! `cargo run --example llm_fixtures -- --record` rewrites `fixtures/llm/`
//! from a scripted stand-in model; without the flag the example only replays.

use std::path::Path;
use std::sync::Arc;

use workpod::mediation::llm::{FixtureBackend, ScriptedChatBackend};
use workpod::mediation::{MediationConfig, WorkflowTable};
use workpod::model::BackendKind;
use workpod::replay::{replay, ReplayOptions};
use workpod::simuser::load_scenario;

const SCENARIOS: [&str; 5] =
    ["s1-drowsiness", "s2-focus", "s3-distraction", "s4-stress", "s5-personalization"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let fixtures = root.join("fixtures/llm");
    if std::env::args().any(|a| a == "--record") {
        std::fs::create_dir_all(&fixtures)?;
        for name in SCENARIOS {
            let script = load_scenario(root.join(format!("scenarios/{name}.jsonl")))?;
            let model = ScriptedChatBackend::new(WorkflowTable::new(MediationConfig::default().presets));
            let opts = ReplayOptions {
                backend: BackendKind::Llm,
                chat: Some(Arc::new(FixtureBackend::recording(&fixtures, Box::new(model)))),
                ..ReplayOptions::default()
            };
            let out = replay(&script, &opts, None)?;
            println!("recorded {name}: {} plans", out.report.plan_count);
        }
    }

    let script = load_scenario(root.join("scenarios/s4-stress.jsonl"))?;
    let opts = ReplayOptions {
        backend: BackendKind::Llm,
        chat: Some(Arc::new(FixtureBackend::replay(&fixtures))),
        ..ReplayOptions::default()
    };
    let out = replay(&script, &opts, None)?;
    for p in &out.report.plans {
        println!("session {} {} via {:?} from_memory={}", p.session_index, p.plan_id, p.backend, p.from_memory);
    }
    println!("thresholds passed: {}", out.passed);
    Ok(())
}
