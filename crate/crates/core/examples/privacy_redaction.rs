//! With consent withheld, the log keeps a keyed digest of each utterance
//! instead of its text, and the metrics report is unchanged.

use workpod::metrics::{compute_report, MetricsConfig};
use workpod::model::Timestamp;
use workpod::session::{CueInput, Runtime, Session, SessionConfig};

fn run(consent: bool) -> Result<workpod::model::SessionLog, Box<dyn std::error::Error>> {
    let mut cfg = SessionConfig::new("p02", 1);
    cfg.consent.store_raw_utterances = consent;
    let mut s = Session::start(cfg, &Runtime::default())?;
    s.ingest(CueInput::utterance(Timestamp::from_secs(30), "I'm feeling a bit drowsy."))?;
    s.end(Timestamp::from_secs(60))?;
    Ok(s.log().clone())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let open = run(true)?;
    let redacted = run(false)?;
    println!("consented cue:  {}", open.lines()[1]);
    println!("redacted cue:   {}", redacted.lines()[1]);
    let leaked = redacted.lines().iter().any(|l| l.contains("drowsy."));
    println!("raw text present in redacted log: {leaked}");
    let same = compute_report(&[open], &MetricsConfig::default())? == compute_report(&[redacted], &MetricsConfig::default())?;
    println!("reports identical: {same}");
    Ok(())
}
