//! Drop the UUV from hover, let it swing, and print a few rows of the
//! trajectory along with the mechanical energy.
//!
//! cargo run --release --example dynamics_rollout [out.csv]

use std::fs::File;

use tethered_uuv::control::ActuatorLimits;
use tethered_uuv::model::{mechanical_energy, ControlInput, ModelParams, SystemState};
use tethered_uuv::stochastic::{DiffusionSpec, Simulator, UncertainParams};

fn main() -> tethered_uuv::Result<()> {
    let p = ModelParams::default();
    let sim = Simulator::new(p.clone(), ActuatorLimits::plant(&p), DiffusionSpec::default(), 0.05, 8.0)?;
    let xi = UncertainParams::from_model(&p, vec![]);
    let noise = sim.noise(3);

    // start displaced 0.5 rad with the winch holding, push the USV for 2 s
    let mut x0 = SystemState::hanging(0.0, 3.0, &p);
    x0.0[0] = 0.5;
    let hover = ControlInput::hover(&p);
    let tr = sim.simulate(&x0, &xi, Some(&noise), |k, _| {
        let mut u = hover;
        if sim.time(k) < 2.0 {
            u.0[3] = 500.0;
        }
        ControlInput(sim.limits.saturate(&u.0))
    });

    println!("{:>5} {:>8} {:>8} {:>8} {:>10}", "t", "x", "d", "X", "E");
    for k in (0..tr.len()).step_by(20) {
        let y = tr.outputs[k];
        let e = mechanical_energy(&tr.states[k], &p);
        println!("{:5.2} {:8.3} {:8.3} {:8.3} {:10.1}", tr.times[k], y.x, y.d, y.usv_x, e);
    }
    if let Some(path) = std::env::args().nth(1) {
        tr.write_csv(File::create(&path).expect("writable output"))?;
        println!("wrote {path}");
    }
    Ok(())
}
