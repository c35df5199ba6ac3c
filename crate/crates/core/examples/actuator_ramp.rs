//! Drives the actuator model through a warm-calm ramp and prints the light
//! level every 20 s until the ramp completes.

use workpod::actuation::{ramp_completion, ActuatorDefaults, ActuatorState};
use workpod::mediation::MediationConfig;
use workpod::model::Timestamp;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut state = ActuatorState::new(&ActuatorDefaults::default());
    let warm = MediationConfig::default().presets.warm_calm.command();
    println!("command {}", serde_json::to_string(&warm)?);
    state.execute(&warm);
    let done = ramp_completion(&state);
    let mut t = 0;
    loop {
        state.step(Timestamp::from_secs(t))?;
        let l = state.light();
        println!("t={t:>3}s  {:>3}%  {:>4} K", l.brightness_pct, l.color_temp_k);
        if state.now() >= done {
            break;
        }
        t += 20;
    }
    println!("target reached: {}", state.light() == state.light_target());
    Ok(())
}
