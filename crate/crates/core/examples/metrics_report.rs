//! Writes replayed logs to a temporary directory, reads them back as text
//! and scores them, as `workpod metrics` does.

use std::path::Path;

use workpod::metrics::{compute_report, render, Format, MetricsConfig};
use workpod::model::SessionLog;
use workpod::replay::{replay, ReplayOptions};
use workpod::simuser::load_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let script = load_scenario(root.join("scenarios/s3-distraction.jsonl"))?;
    let dir = tempfile::tempdir()?;
    let out = replay(&script, &ReplayOptions::default(), Some(dir.path()))?;
    let logs = out
        .files
        .iter()
        .filter(|p| p.to_string_lossy().ends_with(".log.jsonl"))
        .map(|p| Ok(SessionLog::from_text(&std::fs::read_to_string(p)?)?))
        .collect::<Result<Vec<_>, Box<dyn std::error::Error>>>()?;
    let report = compute_report(&logs, &MetricsConfig::default())?;
    print!("{}", render(&report, Format::Csv));
    println!("matches the replay's own report: {}", report.plans == out.report.plans);
    Ok(())
}
