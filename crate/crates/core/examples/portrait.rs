//! Builds the default portrait, prints the special points and the optimal
//! schedule from a few starts.

use harvest_core::policy::{rollout, RolloutOptions};
use harvest_core::{Model, PhasePortrait};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = Model::fix1();
    let portrait = PhasePortrait::build(&model)?;
    println!("{}", portrait.specials_json());

    for (x, k) in [(0.8, 0.1), (0.2, 1.5), (0.375, 1.0), (0.6, 2.0)] {
        let ro = rollout(&portrait, x, k, &RolloutOptions::default())?;
        let phases: Vec<&str> = ro.schedule.phases.iter().map(|p| p.name()).collect();
        println!("({x}, {k}) {}: J = {:.10}  {}", ro.schedule.region, ro.value, phases.join(" -> "));
    }
    Ok(())
}
