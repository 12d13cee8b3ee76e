//! Running cost, collision margin and terminal violation of one rollout.

use nalgebra::Matrix4;

use crate::model::{ControlInput, OutputY};
use crate::stochastic::{Trajectory, UncertainParams};

/// `mu^T R mu`.
pub fn running_cost(mu: &ControlInput, r: &Matrix4<f64>) -> f64 {
    mu.0.dot(&(r * mu.0))
}

/// Largest penetration `a - dist` over the grid and over all obstacles.
/// Negative when the rollout stays outside every obstacle; `-inf` with no
/// obstacles at all.
pub fn collision_margin(traj: &Trajectory, xi: &UncertainParams) -> f64 {
    traj.outputs
        .iter()
        .map(|y| point_margin(y, xi))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn point_margin(y: &OutputY, xi: &UncertainParams) -> f64 {
    xi.obstacles
        .iter()
        .map(|o| -o.clearance(y.x, y.d))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `|y(t_f) - y_d|^2`.
pub fn terminal_violation(traj: &Trajectory, y_d: &OutputY) -> f64 {
    (traj.final_output().as_vector() - y_d.as_vector()).norm_squared()
}

/// Trapezoid weights on a uniform grid of `n + 1` points.
pub(crate) fn trapezoid_weight(k: usize, n: usize, dt: f64) -> f64 {
    if k == 0 || k == n {
        0.5 * dt
    } else {
        dt
    }
}

/// `(1/N) sum_k w_k l(mu_k)` for one rollout (trapezoid over the grid).
pub fn integrated_cost(traj: &Trajectory, r: &Matrix4<f64>) -> f64 {
    let n = traj.len() - 1;
    traj.controls
        .iter()
        .enumerate()
        .map(|(k, mu)| trapezoid_weight(k, n, traj.dt) * running_cost(mu, r))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SystemState, ModelParams};
    use crate::stochastic::Obstacle;

    fn straight_descent(x: f64, d0: f64, d1: f64, n: usize) -> Trajectory {
        let p = ModelParams::default();
        let states: Vec<SystemState> = (0..=n)
            .map(|k| SystemState::hanging(x, d0 + (d1 - d0) * k as f64 / n as f64, &p))
            .collect();
        Trajectory {
            dt: 0.05,
            times: (0..=n).map(|k| k as f64 * 0.05).collect(),
            outputs: states.iter().map(crate::model::output).collect(),
            controls: vec![ControlInput::zero(); n + 1],
            states,
            invalid_from: None,
            diagnostics: vec![],
        }
    }

    fn xi_with(o: Obstacle) -> UncertainParams {
        UncertainParams::from_model(&ModelParams::default(), vec![o])
    }

    #[test]
    fn running_cost_examples() {
        let m = 120.0;
        assert_eq!(running_cost(&ControlInput::zero(), &Matrix4::identity()), 0.0);
        let r = Matrix4::identity() / (m * m);
        assert!((running_cost(&ControlInput::new(m, 0.0, 0.0, 0.0), &r) - 1.0).abs() < 1e-15);
        assert_eq!(running_cost(&ControlInput::new(3.0, 4.0, 0.0, 0.0), &Matrix4::identity()), 25.0);
    }

    #[test]
    fn margin_examples() {
        // descent along x = 0 passes 2 m from the centre at (2, 3)
        let tr = straight_descent(0.0, 1.0, 5.0, 40);
        assert!((collision_margin(&tr, &xi_with(Obstacle::new(2.0, 3.0, 1.0))) + 1.0).abs() < 1e-12);
        assert!(collision_margin(&tr, &xi_with(Obstacle::new(1.0, 3.0, 1.0))).abs() < 1e-12);
        assert!((collision_margin(&tr, &xi_with(Obstacle::new(0.0, 3.0, 0.7))) - 0.7).abs() < 1e-12);
        assert_eq!(collision_margin(&tr, &UncertainParams::from_model(&ModelParams::default(), vec![])), f64::NEG_INFINITY);
    }

    #[test]
    fn terminal_examples() {
        let tr = straight_descent(0.0, 1.0, 2.0, 4);
        assert_eq!(terminal_violation(&tr, &OutputY::new(0.0, 2.0, 0.0)), 0.0);
        assert!((terminal_violation(&tr, &OutputY::new(0.3, 2.0, 0.0)) - 0.09).abs() < 1e-12);
        assert!((terminal_violation(&tr, &OutputY::new(0.3, 2.4, 0.0)) - 0.25).abs() < 1e-12);
    }
}
