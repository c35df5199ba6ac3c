//! Two sessions of one participant: a rated plan in the first becomes a
//! memory recall in the second.

use workpod::model::{RecordBody, Timestamp, Verdict};
use workpod::session::{CueInput, Runtime, Session, SessionConfig};

fn stress(session: &mut Session) -> Result<(String, bool), Box<dyn std::error::Error>> {
    let out = session.ingest(CueInput::utterance(Timestamp::from_secs(60), "This task is stressing me out."))?;
    for r in &out.records {
        if let RecordBody::Actuation(a) = &r.body {
            return Ok((a.plan.id.clone(), a.plan.from_memory));
        }
    }
    Err("no adaptation".into())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rt = Runtime::default();
    for index in 1..=2 {
        let mut session = Session::start(SessionConfig::new("p07", index), &rt)?;
        let (plan, from_memory) = stress(&mut session)?;
        println!("session {index}: {plan} from_memory={from_memory}");
        session.record_rating(&plan, Verdict::Helpful, Timestamp::from_secs(90))?;
        session.end(Timestamp::from_secs(120))?;
        let mem = session.memory().lock().expect("memory");
        println!("  memory now holds {} entr{}", mem.len(), if mem.len() == 1 { "y" } else { "ies" });
    }
    Ok(())
}
