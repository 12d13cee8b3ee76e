//! Cartesian PID tracking of a UUV reference, with the USV following the
//! reference's horizontal coordinate.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::control::ActuatorLimits;
use crate::error::{Error, Result};
use crate::model::{cartesian_velocity, output, ControlInput, ModelParams, SystemState};

/// Gains per output channel `(x, d, X)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidGains {
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub kd: [f64; 3],
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            kp: [800.0; 3],
            ki: [20.0; 3],
            kd: [80.0; 3],
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        let all = self.kp.iter().chain(&self.ki).chain(&self.kd);
        if all.clone().any(|v| !v.is_finite()) || self.ki.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("PID gains must be finite with K_I >= 0"));
        }
        Ok(())
    }
}

/// Reference point for the tracker: UUV position and velocity in the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub x: f64,
    pub d: f64,
    pub x_dot: f64,
    pub d_dot: f64,
}

/// PID state carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PidTracker {
    pub gains: PidGains,
    pub integral: Vector3<f64>,
    /// Feedforward on the winch channel holding the apparent weight.
    pub weight: f64,
    pub u_max: f64,
    pub limits: ActuatorLimits,
}

impl PidTracker {
    pub fn new(gains: PidGains, p: &ModelParams, limits: ActuatorLimits) -> Self {
        PidTracker {
            gains,
            integral: Vector3::zeros(),
            weight: p.m_bar * p.g,
            u_max: p.u_max,
            limits,
        }
    }

    /// Command before saturation. Does not touch the integrator.
    pub fn command(&self, r: &Reference, s: &SystemState) -> ControlInput {
        let y = output(s);
        let (xd, dd) = cartesian_velocity(s);
        let e = Vector3::new(r.x - y.x, r.d - y.d, r.x - y.usv_x);
        let ed = Vector3::new(r.x_dot - xd, r.d_dot - dd, r.x_dot - s.usv_x_dot());
        let g = &self.gains;
        let f = Vector3::from_fn(|i, _| g.kp[i] * e[i] + g.ki[i] * self.integral[i] + g.kd[i] * ed[i]);
        let (st, ct) = s.theta().sin_cos();
        // unit columns of d(x, d)/d(theta, r)
        let u_theta = -ct * f[0] - st * f[1];
        let u_r = -st * f[0] + ct * f[1];
        ControlInput::new(u_theta, u_r, -self.weight, f[2])
    }

    /// Advance the integrator by `dt` and return the saturated command.
    pub fn step(&mut self, r: &Reference, s: &SystemState, dt: f64) -> ControlInput {
        let y = output(s);
        let e = Vector3::new(r.x - y.x, r.d - y.d, r.x - y.usv_x);
        for i in 0..3 {
            self.integral[i] += e[i] * dt;
            let ki = self.gains.ki[i];
            if ki > 0.0 {
                let cap = self.u_max / ki;
                self.integral[i] = self.integral[i].clamp(-cap, cap);
            }
        }
        ControlInput(self.limits.clip(&self.command(r, s).0))
    }
}

/// One tracker step, as a free function over the tracker state.
pub fn pid_track(r: &Reference, s: &SystemState, tracker: &mut PidTracker, dt: f64) -> ControlInput {
    tracker.step(r, s, dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(ki: f64) -> (PidTracker, ModelParams) {
        let p = ModelParams::default();
        let gains = PidGains {
            ki: [ki; 3],
            ..Default::default()
        };
        (PidTracker::new(gains, &p, ActuatorLimits::default()), p)
    }

    fn at(s: &SystemState) -> Reference {
        let y = output(s);
        Reference {
            x: y.x,
            d: y.d,
            x_dot: 0.0,
            d_dot: 0.0,
        }
    }

    #[test]
    fn zero_error_is_feedforward() {
        let (t, p) = setup(20.0);
        let s = SystemState::hanging(1.0, 3.0, &p);
        let u = t.command(&at(&s), &s);
        assert_eq!((u.0[1], u.0[2], u.0[3]), (0.0, -p.m_bar * p.g, 0.0));
        assert_eq!(u.0[0].abs(), 0.0);
    }

    #[test]
    fn depth_error_pulls_down() {
        let (mut t, p) = setup(20.0);
        let s = SystemState::hanging(0.0, 3.0, &p);
        let mut r = at(&s);
        r.d += 0.2;
        let u = t.step(&r, &s, 0.05);
        assert!(u.0[1] > 0.0);
        r.d -= 0.4;
        assert!(t.command(&r, &s).0[1] < 0.0);
    }

    #[test]
    fn integral_accumulates_in_closed_form() {
        let (mut t, p) = setup(20.0);
        let s = SystemState::hanging(0.0, 3.0, &p);
        let mut r = at(&s);
        r.d += 0.1;
        let (n, dt) = (30, 0.05);
        for _ in 0..n {
            t.step(&r, &s, dt);
        }
        assert!((t.gains.ki[1] * t.integral[1] - 20.0 * 0.1 * n as f64 * dt).abs() < 1e-12);
        assert!((t.integral[1] - 0.1 * n as f64 * dt).abs() < 1e-12);
    }

    #[test]
    fn integral_is_clamped() {
        let (mut t, p) = setup(20.0);
        let s = SystemState::hanging(0.0, 3.0, &p);
        let mut r = at(&s);
        r.d += 5.0;
        for _ in 0..1000 {
            t.step(&r, &s, 0.05);
        }
        assert!((20.0 * t.integral[1] - 400.0).abs() < 1e-9);
    }

    #[test]
    fn memoryless_without_integral() {
        let (mut t, p) = setup(0.0);
        let s = SystemState::hanging(0.0, 3.0, &p);
        let mut r = at(&s);
        r.x += 0.3;
        let first = t.step(&r, &s, 0.05);
        for _ in 0..10 {
            t.step(&r, &s, 0.05);
        }
        assert_eq!(t.step(&r, &s, 0.05), first);
    }
}
