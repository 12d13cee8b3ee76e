//! Receding-horizon MPPI on the expected model, flown against a plant with
//! 20% heavier UUV.
//!
//! cargo run --release --example mppi_episode

use nalgebra::Matrix4;
use tethered_uuv::baselines::{run_mppi, Episode, MppiHyper};
use tethered_uuv::control::ActuatorLimits;
use tethered_uuv::evaluation::{collision_flag, energy, final_position_error};
use tethered_uuv::model::{ModelParams, OutputY, SystemState};
use tethered_uuv::stochastic::{DiffusionSpec, Obstacle, Simulator, UncertainParams};

fn main() -> tethered_uuv::Result<()> {
    let p = ModelParams::default();
    let sim = Simulator::new(p.clone(), ActuatorLimits::plant(&p), DiffusionSpec::default(), 0.05, 12.0)?;
    let obstacle = Obstacle::new(1.0, 3.0, 0.6);
    let belief = UncertainParams::from_model(&p, vec![obstacle]);
    let mut truth = belief.clone();
    truth.m *= 1.2;
    truth.m_bar *= 1.2;
    let y_d = OutputY::new(2.0, 4.5, 2.0);
    let ep = Episode {
        sim: &sim,
        truth: &truth,
        noise: Some(&sim.noise(2)),
        x0: SystemState::hanging(0.0, 1.5, &p),
        y_d,
        belief: &belief,
    };
    let r = Matrix4::identity() / (p.m * p.m);
    let tr = run_mppi(&ep, &MppiHyper::default(), &r, 5);
    for k in (0..tr.len()).step_by(40) {
        let y = tr.outputs[k];
        println!("t {:5.2}  x {:6.3}  d {:6.3}  X {:6.3}", tr.times[k], y.x, y.d, y.usv_x);
    }
    println!(
        "final error {:.3} m, collision {}, energy {:.4e}",
        final_position_error(&tr, &y_d),
        collision_flag(&tr, &[obstacle]),
        energy(&tr)
    );
    Ok(())
}
