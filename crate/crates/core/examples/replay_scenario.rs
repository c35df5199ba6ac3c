//! Replays a bundled scenario for four sessions and prints the report.
//!
//! `cargo run --example replay_scenario -- scenarios/s3-distraction.jsonl`

use std::path::Path;

use workpod::metrics::{render, Format};
use workpod::replay::{replay, ReplayOptions};
use workpod::simuser::load_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let path = std::env::args().nth(1).map_or_else(|| root.join("scenarios/s2-focus.jsonl"), Into::into);
    let script = load_scenario(&path)?;
    let out = replay(&script, &ReplayOptions { actuator_delay_ms: 100, ..ReplayOptions::default() }, None)?;
    print!("{}", render(&out.report, Format::Table));
    println!("{} sessions, {} records total", out.logs.len(), out.logs.iter().map(|l| l.len()).sum::<usize>());
    Ok(())
}
