//! Per-rollout metrics: final error, collision flag, actuator energy.

use crate::model::OutputY;
use crate::stochastic::{Obstacle, Trajectory};

/// Final error recorded for rollouts that broke down: the arena diagonal.
pub const INVALID_FINAL_ERROR: f64 = 8.0 * std::f64::consts::SQRT_2;

/// `|y(t_f) - y_d|` over all three outputs.
pub fn final_position_error(traj: &Trajectory, y_d: &OutputY) -> f64 {
    if !traj.is_valid() {
        return INVALID_FINAL_ERROR;
    }
    (traj.final_output().as_vector() - y_d.as_vector()).norm()
}

/// 1 if the UUV ever gets strictly inside an obstacle, or the rollout is invalid.
pub fn collision_flag(traj: &Trajectory, obstacles: &[Obstacle]) -> u8 {
    if !traj.is_valid() {
        return 1;
    }
    let hit = traj
        .outputs
        .iter()
        .any(|y| obstacles.iter().any(|o| o.clearance(y.x, y.d) < 0.0));
    hit as u8
}

/// Trapezoid integral of `|f|^2` over the recorded actuator forces.
pub fn energy(traj: &Trajectory) -> f64 {
    let n = traj.len();
    if n < 2 {
        return 0.0;
    }
    let e: Vec<f64> = traj.states.iter().map(|s| s.forces().norm_squared()).collect();
    let inner: f64 = e[1..n - 1].iter().sum();
    traj.dt * (inner + 0.5 * (e[0] + e[n - 1]))
}
