//! Plan a descent around an uncertain obstacle with and without feedback,
//! then check both plans on fresh samples.
//!
//! cargo run --release --example plan_around_obstacle

use tethered_uuv::control::FeedbackGain;
use tethered_uuv::model::{ModelParams, OutputY, SystemState};
use tethered_uuv::optimizer::{solve_socp_fb, OcpSpec, SaaProblem, SampleSet};
use tethered_uuv::stochastic::{Obstacle, UncertaintySpec};

fn main() -> tethered_uuv::Result<()> {
    let p = ModelParams::default();
    let obstacle = Obstacle::new(0.2, 3.0, 0.8);
    let unc = UncertaintySpec::new(&p, vec![obstacle], 0.5);
    let x0 = SystemState::hanging(-1.5, 1.0, &p);
    let y_d = OutputY::new(1.5, 5.0, 1.5);

    for gain in [FeedbackGain::table2(), FeedbackGain::zero()] {
        let mut spec = OcpSpec::new(p.clone(), unc.clone(), x0, y_d);
        spec.gain = gain;
        spec.seed = 1;
        let report = solve_socp_fb(&spec, None)?;
        println!("{}", serde_json::to_string_pretty(&report)?);

        let held_out = SaaProblem::new(&spec, SampleSet::draw(&spec, 99)?)?;
        let v = held_out.evaluate(&report.plan)?;
        println!(
            "{}: held-out cvar {:.4} m, mean H {:.4} m^2, objective {:.2}",
            spec.method_label(),
            v.cvar_value,
            v.mean_h,
            v.objective
        );
    }
    Ok(())
}
