//! Second-order control barrier filter on the UUV thruster channels.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::model::{accelerations, idx, ControlInput, Plant, SystemState, STATE_DIM};
use crate::stochastic::Obstacle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbfParams {
    /// Class-K coefficients in `h'' + k1 h' + k0 h >= 0`.
    pub k0: f64,
    pub k1: f64,
}

impl Default for CbfParams {
    fn default() -> Self {
        CbfParams { k0: 4.0, k1: 4.0 }
    }
}

/// What the filter did at one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CbfDiagnostics {
    /// Smallest barrier value over the obstacles.
    pub h: f64,
    pub active: bool,
    pub infeasible: bool,
}

/// Cartesian acceleration of the UUV as `p0 + B (u_theta, u_r)`, with the
/// commanded thruster forces applied instantly and the other channels held at
/// `u_nom`.
fn affine_acceleration(s: &SystemState, u_nom: &ControlInput, pl: &Plant) -> (Vector2<f64>, [Vector2<f64>; 2]) {
    let cart = |ft: f64, fr: f64| {
        let mut x: [f64; STATE_DIM] = s.0.into();
        x[idx::F_THETA] = ft;
        x[idx::F_R] = fr;
        x[idx::F_L] = u_nom.0[2];
        x[idx::F_X] = u_nom.0[3];
        let [th_dd, r_dd, x_dd] = accelerations(&x, pl);
        let (th, r, td, rd) = (x[idx::THETA], x[idx::R], x[idx::THETA_DOT], x[idx::R_DOT]);
        let (st, ct) = th.sin_cos();
        Vector2::new(
            x_dd - r_dd * st - 2.0 * rd * ct * td + r * st * td * td - r * ct * th_dd,
            r_dd * ct - 2.0 * rd * st * td - r * ct * td * td - r * st * th_dd,
        )
    };
    let p0 = cart(0.0, 0.0);
    (p0, [cart(1.0, 0.0) - p0, cart(0.0, 1.0) - p0])
}

/// `min |u - u_nom|^2` over the thruster box subject to one barrier
/// condition per obstacle, enforced for the most constraining obstacle.
///
/// With one active constraint `a.u >= b` the minimizer is
/// `clip(u_nom + nu a)` for the smallest feasible `nu >= 0`. If no point of
/// the box satisfies the condition the box corner maximizing `a.u` is used.
pub fn cbf_filter(
    u_nom: &ControlInput,
    s: &SystemState,
    obstacles: &[Obstacle],
    plant: &Plant,
    u_max: f64,
    params: &CbfParams,
) -> (ControlInput, CbfDiagnostics) {
    let clip = |v: Vector2<f64>| Vector2::new(v[0].clamp(-u_max, u_max), v[1].clamp(-u_max, u_max));
    let mut diag = CbfDiagnostics {
        h: f64::INFINITY,
        ..Default::default()
    };
    let u0 = Vector2::new(u_nom.0[0], u_nom.0[1]);
    let mut u = clip(u0);
    if obstacles.is_empty() {
        return (with_thrusters(u_nom, u), diag);
    }
    let (p0, b) = affine_acceleration(s, u_nom, plant);
    let y = crate::model::output(s);
    let (xd, dd) = crate::model::cartesian_velocity(s);
    let v = Vector2::new(xd, dd);

    // pick the obstacle whose condition is most violated at the clipped nominal
    let mut worst: Option<(f64, Vector2<f64>, f64)> = None;
    for o in obstacles {
        let e = Vector2::new(y.x - o.x, y.d - o.d);
        let h = e.norm_squared() - o.a * o.a;
        let h_dot = 2.0 * e.dot(&v);
        diag.h = diag.h.min(h);
        let a = Vector2::new(2.0 * e.dot(&b[0]), 2.0 * e.dot(&b[1]));
        let rhs = -(2.0 * v.norm_squared() + 2.0 * e.dot(&p0) + params.k1 * h_dot + params.k0 * h);
        let slack = a.dot(&u) - rhs;
        if worst.is_none_or(|w| slack < w.0) {
            worst = Some((slack, a, rhs));
        }
    }
    let (slack, a, rhs) = worst.expect("at least one obstacle");
    if slack >= 0.0 {
        return (with_thrusters(u_nom, u), diag);
    }
    diag.active = true;
    let best = Vector2::new(u_max * a[0].signum(), u_max * a[1].signum());
    if a.dot(&best) < rhs {
        diag.infeasible = true;
        return (with_thrusters(u_nom, best), diag);
    }
    let f = |nu: f64| a.dot(&clip(u0 + a * nu)) - rhs;
    let mut hi = 1.0 / a.norm_squared().max(1e-300);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    u = clip(u0 + a * hi);
    (with_thrusters(u_nom, u), diag)
}

fn with_thrusters(u_nom: &ControlInput, u: Vector2<f64>) -> ControlInput {
    ControlInput::new(u[0], u[1], u_nom.0[2], u_nom.0[3])
}
