//! Competitor controllers, all built on the expected-parameter model:
//! A* reference + PID tracking + CBF filter, and MPPI.

mod astar;
mod cbf;
mod mppi;
mod pid;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

pub use astar::{astar_plan, Connectivity, GridPath, GridSpec};
pub use cbf::{cbf_filter, CbfDiagnostics, CbfParams};
pub use mppi::{mppi_step, mppi_weights, Mppi, MppiHyper};
pub use pid::{pid_track, PidGains, PidTracker, Reference};

use crate::error::Result;
use crate::model::{output, OutputY, Plant, SystemState};
use crate::stochastic::{NoiseRealization, Simulator, Trajectory, UncertainParams};

/// Hyperparameters of both baselines.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub grid: GridSpec,
    pub pid: PidGains,
    pub cbf: CbfParams,
    pub mppi: MppiHyper,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.pid.validate()?;
        self.mppi.validate()
    }
}

/// One episode: the true plant and noise to run against, and what the
/// controller is allowed to know.
#[derive(Clone, Copy, Debug)]
pub struct Episode<'a> {
    pub sim: &'a Simulator,
    pub truth: &'a UncertainParams,
    pub noise: Option<&'a NoiseRealization>,
    pub x0: SystemState,
    pub y_d: OutputY,
    /// Expected parameters and observed obstacles.
    pub belief: &'a UncertainParams,
}

fn pad(col: &mut Vec<f64>, len: usize) {
    col.resize(len, f64::NAN);
}

/// Track an A* path at constant speed with PID and filter every command
/// through the CBF. The reference and the filter's diagnostics are
/// appended as extra trajectory columns.
pub fn run_astar_pid_cbf(ep: &Episode, cfg: &BaselineConfig) -> Trajectory {
    let sim = ep.sim;
    let y0 = output(&ep.x0);
    let (start, goal) = ((y0.x, y0.d), (ep.y_d.x, ep.y_d.d));
    let (path, fallback) = match astar_plan(&cfg.grid, start, goal, &ep.belief.obstacles) {
        Ok(p) => (p, false),
        Err(_) => {
            let len = (goal.0 - start.0).hypot(goal.1 - start.1);
            (
                GridPath {
                    waypoints: vec![start, goal],
                    length: len,
                    grid_cost: len,
                },
                true,
            )
        }
    };
    let plant = Plant::new(&sim.params, ep.belief);
    let mut tracker = PidTracker::new(cfg.pid.clone(), &sim.params, sim.limits);
    let t_f = sim.t_f();
    let mut cols = [vec![], vec![], vec![], vec![], vec![]];
    let mut tr = sim.simulate(&ep.x0, ep.truth, ep.noise, |k, x| {
        let ((rx, rd), (vx, vd)) = path.sample(sim.time(k), t_f);
        let r = Reference {
            x: rx,
            d: rd,
            x_dot: vx,
            d_dot: vd,
        };
        let u_nom = tracker.step(&r, x, sim.dt);
        let (u, diag) = cbf_filter(&u_nom, x, &ep.belief.obstacles, &plant, sim.params.u_max, &cfg.cbf);
        cols[0].push(rx);
        cols[1].push(rd);
        cols[2].push(diag.h);
        cols[3].push(diag.active as u8 as f64);
        cols[4].push(diag.infeasible as u8 as f64);
        u
    });
    let names = ["ref_x", "ref_d", "cbf_h", "cbf_active", "cbf_infeasible"];
    for (name, mut col) in names.into_iter().zip(cols) {
        pad(&mut col, tr.len());
        tr.diagnostics.push((name.to_string(), col));
    }
    tr.diagnostics.push(("astar_fallback".into(), vec![fallback as u8 as f64; tr.len()]));
    tr
}

/// Receding-horizon MPPI on the expected model.
pub fn run_mppi(ep: &Episode, hyper: &MppiHyper, r_weight: &Matrix4<f64>, seed: u64) -> Trajectory {
    let sim = ep.sim;
    let plant = Plant::new(&sim.params, ep.belief);
    let mut ctl = Mppi::new(
        hyper.clone(),
        plant,
        sim.limits,
        *r_weight,
        sim.dt,
        ep.y_d,
        ep.belief.obstacles.clone(),
        seed,
    );
    let every = ((hyper.replan_period / sim.dt).round() as usize).max(1);
    sim.simulate(&ep.x0, ep.truth, ep.noise, |k, x| {
        let j = k % every;
        if j == 0 {
            if k > 0 {
                ctl.shift(every);
            }
            ctl.optimize(x);
        }
        crate::model::ControlInput(ctl.sequence[j.min(ctl.sequence.len() - 1)])
    })
}
