//! Mediates one utterance with the deterministic oracle and prints the
//! inferred state and the adaptation commands.

use workpod::detect::{route_utterance, TriggerCue};
use workpod::mediation::memory::PersonalizationMemory;
use workpod::mediation::{MediationConfig, Mediator};
use workpod::model::{CueEvent, CuePayload, Timestamp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = "This task is stressing me out.";
    let hint = route_utterance(text);
    let cue = CueEvent {
        id: "cue-1".into(),
        ts: Timestamp::from_secs(300),
        payload: CuePayload::Utterance { text: text.into(), hint },
    };
    let trigger = TriggerCue::lexical(&cue, text, hint).ok_or("utterance has no lexicon hint")?;

    let mediator = Mediator::oracle(MediationConfig::default());
    let out = mediator.infer_oracle(&trigger, &PersonalizationMemory::new("p01"))?;
    println!("state {:?} confidence {}", out.response.state, out.response.confidence.value());
    println!("class {:?}", out.response.intervention_class);
    for cmd in &out.response.commands {
        println!("  {}", serde_json::to_string(cmd)?);
    }
    Ok(())
}
