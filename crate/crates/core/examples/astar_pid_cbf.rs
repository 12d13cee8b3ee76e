//! Grid path, PID tracking and a barrier filter around an obstacle whose
//! observed position is off by 30 cm.
//!
//! cargo run --release --example astar_pid_cbf

use tethered_uuv::baselines::{run_astar_pid_cbf, BaselineConfig, Episode};
use tethered_uuv::control::ActuatorLimits;
use tethered_uuv::evaluation::{collision_flag, energy, final_position_error};
use tethered_uuv::model::{ModelParams, OutputY, SystemState};
use tethered_uuv::stochastic::{DiffusionSpec, Obstacle, Simulator, UncertainParams};

fn main() -> tethered_uuv::Result<()> {
    let p = ModelParams::default();
    let sim = Simulator::new(p.clone(), ActuatorLimits::plant(&p), DiffusionSpec::default(), 0.05, 12.0)?;
    let truth_obstacle = Obstacle::new(0.3, 3.5, 0.8);
    let truth = UncertainParams::from_model(&p, vec![truth_obstacle]);
    let belief = UncertainParams::from_model(&p, vec![Obstacle::new(0.0, 3.5, 0.8)]);
    let noise = sim.noise(8);
    let y_d = OutputY::new(0.0, 6.0, 0.0);
    let ep = Episode {
        sim: &sim,
        truth: &truth,
        noise: Some(&noise),
        x0: SystemState::hanging(0.0, 1.0, &p),
        y_d,
        belief: &belief,
    };
    let tr = run_astar_pid_cbf(&ep, &BaselineConfig::default());
    let active = tr.diagnostics.iter().find(|(n, _)| n == "cbf_active").map_or(0.0, |(_, c)| c.iter().sum());
    println!("final error {:.3} m", final_position_error(&tr, &y_d));
    println!("collision   {}", collision_flag(&tr, &[truth_obstacle]));
    println!("energy      {:.4e}", energy(&tr));
    println!("CBF active on {active} of {} steps", tr.len());
    Ok(())
}
