//! Model predictive path integral control on the expected-parameter model.

use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ActuatorLimits;
use crate::error::{Error, Result};
use crate::model::{cartesian_velocity, output, ControlInput, OutputY, Plant, StateVector, SystemState, R_MIN};
use crate::stochastic::{em_step_raw, DiffusionSpec, Obstacle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MppiHyper {
    pub samples: usize,
    /// Prediction horizon (s).
    pub horizon: f64,
    /// Temperature of the exponential weighting.
    pub lambda: f64,
    /// Standard deviation of the input perturbation per channel (N).
    pub noise_std: [f64; 4],
    /// Time between re-optimizations (s).
    pub replan_period: f64,
    /// Weight on the squared distance to the target at the horizon end.
    pub terminal_weight: f64,
    /// Weight on the squared UUV and USV speed at the horizon end.
    pub terminal_velocity_weight: f64,
    /// Cost per step per metre of obstacle penetration.
    pub obstacle_weight: f64,
}

impl Default for MppiHyper {
    fn default() -> Self {
        MppiHyper {
            samples: 256,
            horizon: 2.0,
            lambda: 100.0,
            noise_std: [100.0; 4],
            replan_period: 0.05,
            terminal_weight: 1e3,
            terminal_velocity_weight: 1e3,
            obstacle_weight: 1e6,
        }
    }
}

impl MppiHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.samples >= 1
            && self.horizon > 0.0
            && self.lambda > 0.0
            && self.replan_period > 0.0
            && self.noise_std.iter().all(|s| *s >= 0.0)
            && self.terminal_weight >= 0.0
            && self.terminal_velocity_weight >= 0.0
            && self.obstacle_weight >= 0.0;
        if !ok {
            return Err(Error::invalid("MPPI hyperparameters must be positive"));
        }
        Ok(())
    }
}

/// Normalized weights `exp(-(S_i - min S) / lambda)`.
pub fn mppi_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|s| (-(s - min) / lambda).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

/// Receding-horizon controller holding the warm-started input sequence.
#[derive(Clone, Debug)]
pub struct Mppi {
    pub hyper: MppiHyper,
    pub plant: Plant,
    pub limits: ActuatorLimits,
    pub r_weight: Matrix4<f64>,
    pub dt: f64,
    pub target: OutputY,
    pub obstacles: Vec<Obstacle>,
    /// Current mean input sequence over the horizon.
    pub sequence: Vec<Vector4<f64>>,
    rng: ChaCha8Rng,
}

impl Mppi {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        hyper: MppiHyper,
        plant: Plant,
        limits: ActuatorLimits,
        r_weight: Matrix4<f64>,
        dt: f64,
        target: OutputY,
        obstacles: Vec<Obstacle>,
        seed: u64,
    ) -> Self {
        let steps = ((hyper.horizon / dt).round() as usize).max(1);
        let hover = Vector4::new(0.0, 0.0, -plant.m_bar * plant.g, 0.0);
        Mppi {
            hyper,
            plant,
            limits,
            r_weight,
            dt,
            target,
            obstacles,
            sequence: vec![hover; steps],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn clip(&self, v: Vector4<f64>) -> Vector4<f64> {
        self.limits.clip(&v)
    }

    /// Cost of one input sequence from `x0` on the expected model.
    pub fn rollout_cost(&self, x0: &SystemState, seq: &[Vector4<f64>]) -> f64 {
        let zero = DiffusionSpec::zero();
        let mut x: StateVector = x0.0;
        let mut cost = 0.0;
        for u in seq {
            cost += self.dt * u.dot(&(self.r_weight * u));
            x = em_step_raw(&x, u, &self.plant, &zero, self.dt, None);
            if !(x[1] > R_MIN) || !x.iter().all(|v| v.is_finite()) {
                return 1e12;
            }
            let y = output(&SystemState(x));
            for o in &self.obstacles {
                let pen = -o.clearance(y.x, y.d);
                if pen > 0.0 {
                    cost += self.hyper.obstacle_weight * pen;
                }
            }
        }
        let s = SystemState(x);
        let y = output(&s);
        let (xd, dd) = cartesian_velocity(&s);
        let speed2 = xd * xd + dd * dd + s.usv_x_dot().powi(2);
        cost + self.hyper.terminal_weight * (y.as_vector() - self.target.as_vector()).norm_squared()
            + self.hyper.terminal_velocity_weight * speed2
    }

    /// Sample, score and average; returns the first input of the updated
    /// sequence without shifting it.
    pub fn optimize(&mut self, x: &SystemState) -> ControlInput {
        let h = self.sequence.len();
        let normals: Vec<Normal<f64>> = self.hyper.noise_std.iter().map(|&s| Normal::new(0.0, s).unwrap()).collect();
        let candidates: Vec<Vec<Vector4<f64>>> = (0..self.hyper.samples)
            .map(|_| {
                (0..h)
                    .map(|k| {
                        let eps = Vector4::from_fn(|c, _| normals[c].sample(&mut self.rng));
                        self.clip(self.sequence[k] + eps)
                    })
                    .collect()
            })
            .collect();
        let costs: Vec<f64> = candidates.par_iter().map(|seq| self.rollout_cost(x, seq)).collect();
        let w = mppi_weights(&costs, self.hyper.lambda);
        for k in 0..h {
            self.sequence[k] = candidates.iter().zip(&w).map(|(seq, wi)| seq[k] * *wi).sum();
        }
        ControlInput(self.sequence[0])
    }

    /// Drop the first `n` inputs and repeat the last one at the end.
    pub fn shift(&mut self, n: usize) {
        for _ in 0..n.min(self.sequence.len()) {
            self.sequence.remove(0);
            let last = *self.sequence.last().unwrap_or(&Vector4::zeros());
            self.sequence.push(last);
        }
    }
}

/// One stateless MPPI decision from a hover warm start.
#[allow(clippy::too_many_arguments)]
pub fn mppi_step(
    state: &SystemState,
    target: &OutputY,
    obstacles: &[Obstacle],
    plant: &Plant,
    limits: &ActuatorLimits,
    r_weight: &Matrix4<f64>,
    dt: f64,
    hyper: &MppiHyper,
    seed: u64,
) -> ControlInput {
    Mppi::new(hyper.clone(), *plant, *limits, *r_weight, dt, *target, obstacles.to_vec(), seed).optimize(state)
}
