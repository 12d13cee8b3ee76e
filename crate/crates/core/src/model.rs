//! Planar tethered UUV-USV plant.
//!
//! State layout (12 entries): `q = (theta, r, l, X)`, `q_dot`, and the lagged
//! actuator forces `f = (f_theta, f_r, f_l, f_X)`. The tether is taut, so the
//! winch row mirrors the radial row (`l_ddot = r_ddot`).

use nalgebra::{SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::{Jet, Real};
use crate::stochastic::UncertainParams;

pub const STATE_DIM: usize = 12;
pub const INPUT_DIM: usize = 4;

/// Polar radius below which the taut-tether model is not trusted.
pub const R_MIN: f64 = 0.05;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;

pub mod idx {
    pub const THETA: usize = 0;
    pub const R: usize = 1;
    pub const L: usize = 2;
    pub const X: usize = 3;
    pub const THETA_DOT: usize = 4;
    pub const R_DOT: usize = 5;
    pub const L_DOT: usize = 6;
    pub const X_DOT: usize = 7;
    pub const F_THETA: usize = 8;
    pub const F_R: usize = 9;
    pub const F_L: usize = 10;
    pub const F_X: usize = 11;
}

/// Physical constants of the plant. Defaults are the nominal simulation values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// UUV mass in air (kg).
    pub m: f64,
    /// Apparent underwater weight-mass of the UUV (kg).
    pub m_bar: f64,
    #[serde(rename = "M")]
    pub usv_mass: f64,
    #[serde(rename = "M_l")]
    pub winch_mass: f64,
    pub g: f64,
    pub c_theta: f64,
    pub c_r: f64,
    pub c_l: f64,
    #[serde(rename = "c_X")]
    pub c_x: f64,
    #[serde(rename = "T_theta")]
    pub t_theta: f64,
    #[serde(rename = "T_r")]
    pub t_r: f64,
    #[serde(rename = "T_l")]
    pub t_l: f64,
    #[serde(rename = "T_X")]
    pub t_x: f64,
    pub u_max: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            m: 120.0,
            m_bar: 90.0,
            usv_mass: 1075.0,
            winch_mass: 30.0,
            g: 9.8,
            c_theta: 120.0,
            c_r: 120.0,
            c_l: 300.0,
            c_x: 1000.0,
            t_theta: 0.1,
            t_r: 0.1,
            t_l: 0.5,
            t_x: 1.0,
            u_max: 400.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("m_bar", self.m_bar),
            ("M", self.usv_mass),
            ("M_l", self.winch_mass),
            ("g", self.g),
            ("c_theta", self.c_theta),
            ("c_r", self.c_r),
            ("c_l", self.c_l),
            ("c_X", self.c_x),
            ("T_theta", self.t_theta),
            ("T_r", self.t_r),
            ("T_l", self.t_l),
            ("T_X", self.t_x),
            ("u_max", self.u_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("model parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Weight the UUV hangs on the tether with, `m_bar * g`.
    pub fn hover_force(&self) -> f64 {
        self.m_bar * self.g
    }

    /// Diagonal of `T^-1`, in input order.
    pub fn inverse_lags(&self) -> Vector4<f64> {
        Vector4::new(1.0 / self.t_theta, 1.0 / self.t_r, 1.0 / self.t_l, 1.0 / self.t_x)
    }
}

/// Copy of the constants actually used by the vector field, with the uncertain
/// entries already substituted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plant {
    pub m: f64,
    pub m_bar: f64,
    pub usv_mass: f64,
    pub winch_mass: f64,
    pub g: f64,
    pub c_theta: f64,
    pub c_r: f64,
    pub c_l: f64,
    pub c_x: f64,
    pub inv_lag: [f64; 4],
}

impl Plant {
    pub fn new(p: &ModelParams, xi: &UncertainParams) -> Self {
        Plant {
            m: xi.m,
            m_bar: xi.m_bar,
            c_theta: xi.c_theta,
            c_r: xi.c_r,
            ..Plant::nominal(p)
        }
    }

    /// Plant with every constant taken from `p`.
    pub fn nominal(p: &ModelParams) -> Self {
        let il = p.inverse_lags();
        Plant {
            m: p.m,
            m_bar: p.m_bar,
            usv_mass: p.usv_mass,
            winch_mass: p.winch_mass,
            g: p.g,
            c_theta: p.c_theta,
            c_r: p.c_r,
            c_l: p.c_l,
            c_x: p.c_x,
            inv_lag: [il[0], il[1], il[2], il[3]],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemState(pub StateVector);

impl SystemState {
    pub fn new(q: [f64; 4], q_dot: [f64; 4], f: [f64; 4]) -> Self {
        let mut v = StateVector::zeros();
        for i in 0..4 {
            v[i] = q[i];
            v[4 + i] = q_dot[i];
            v[8 + i] = f[i];
        }
        SystemState(v)
    }

    /// State at rest with a taut tether (`l = r`) and the given actuator forces.
    pub fn at_rest(theta: f64, r: f64, usv_x: f64, f: [f64; 4]) -> Self {
        SystemState::new([theta, r, r, usv_x], [0.0; 4], f)
    }

    /// Rest state directly below the USV at depth `d`, winch carrying the weight.
    pub fn hanging(x: f64, d: f64, p: &ModelParams) -> Self {
        SystemState::at_rest(0.0, d, x, [0.0, 0.0, -p.hover_force(), 0.0])
    }

    pub fn theta(&self) -> f64 {
        self.0[idx::THETA]
    }
    pub fn r(&self) -> f64 {
        self.0[idx::R]
    }
    pub fn l(&self) -> f64 {
        self.0[idx::L]
    }
    pub fn usv_x(&self) -> f64 {
        self.0[idx::X]
    }
    pub fn theta_dot(&self) -> f64 {
        self.0[idx::THETA_DOT]
    }
    pub fn r_dot(&self) -> f64 {
        self.0[idx::R_DOT]
    }
    pub fn l_dot(&self) -> f64 {
        self.0[idx::L_DOT]
    }
    pub fn usv_x_dot(&self) -> f64 {
        self.0[idx::X_DOT]
    }
    pub fn q(&self) -> Vector4<f64> {
        self.0.fixed_rows::<4>(0).into_owned()
    }
    pub fn q_dot(&self) -> Vector4<f64> {
        self.0.fixed_rows::<4>(4).into_owned()
    }
    pub fn forces(&self) -> Vector4<f64> {
        self.0.fixed_rows::<4>(8).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Re-impose the taut-tether coupling `l = r`, `l_dot = r_dot`.
    pub fn enforce_taut(&mut self) {
        self.0[idx::L] = self.0[idx::R];
        self.0[idx::L_DOT] = self.0[idx::R_DOT];
    }

    /// Copy with `theta` wrapped to `(-pi, pi]`.
    pub fn wrapped(&self) -> Self {
        let mut s = *self;
        s.0[idx::THETA] = wrap_angle(s.0[idx::THETA]);
        s
    }
}

/// Commanded actuator signals `(u_theta, u_r, u_l, u_X)` in newtons.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ControlInput(pub Vector4<f64>);

impl ControlInput {
    pub fn new(u_theta: f64, u_r: f64, u_l: f64, u_x: f64) -> Self {
        ControlInput(Vector4::new(u_theta, u_r, u_l, u_x))
    }

    pub fn zero() -> Self {
        ControlInput(Vector4::zeros())
    }

    /// Winch holds the apparent weight, thrusters idle.
    pub fn hover(p: &ModelParams) -> Self {
        ControlInput::new(0.0, 0.0, -p.hover_force(), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Measured output `y = (x, d, X)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputY {
    pub x: f64,
    pub d: f64,
    #[serde(rename = "X")]
    pub usv_x: f64,
}

impl OutputY {
    pub fn new(x: f64, d: f64, usv_x: f64) -> Self {
        OutputY { x, d, usv_x }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.d, self.usv_x)
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn cartesian_from_polar(theta: f64, r: f64, usv_x: f64) -> Result<(f64, f64)> {
    if !(r > 0.0) {
        return Err(Error::NonPositiveRadius(r));
    }
    Ok((usv_x - r * theta.sin(), r * theta.cos()))
}

pub fn polar_from_cartesian(x: f64, d: f64, usv_x: f64) -> Result<(f64, f64)> {
    let dx = usv_x - x;
    let r = dx.hypot(d);
    if !(r > 0.0) {
        return Err(Error::NonPositiveRadius(r));
    }
    Ok((dx.atan2(d), r))
}

/// UUV Cartesian velocity `(x_dot, d_dot)` from polar rates.
pub fn cartesian_velocity(s: &SystemState) -> (f64, f64) {
    let (st, ct) = s.theta().sin_cos();
    let (r, rd, td) = (s.r(), s.r_dot(), s.theta_dot());
    (s.usv_x_dot() - rd * st - r * td * ct, rd * ct - r * td * st)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DragForces {
    pub eta_x: f64,
    pub eta_l: f64,
    pub eta_theta: f64,
    pub eta_r: f64,
}

pub fn drag_forces(s: &SystemState, p: &ModelParams) -> DragForces {
    let (st, ct) = s.theta().sin_cos();
    let v_theta = s.usv_x_dot() * ct + s.r() * s.theta_dot();
    let v_r = s.usv_x_dot() * st + s.r_dot();
    DragForces {
        eta_x: p.c_x * s.usv_x_dot(),
        eta_l: p.c_l * s.l_dot(),
        eta_theta: p.c_theta * v_theta.abs() * v_theta,
        eta_r: p.c_r * v_r.abs() * v_r,
    }
}

/// Generalized accelerations `(theta_ddot, r_ddot, X_ddot)` given the state.
///
/// The USV row does not depend on the UUV, so `X_ddot` is solved first and
/// substituted into the other two rows.
#[inline]
pub fn accelerations<S: Real>(x: &[S; STATE_DIM], pl: &Plant) -> [S; 3] {
    let theta = x[idx::THETA];
    let r = x[idx::R];
    let td = x[idx::THETA_DOT];
    let rd = x[idx::R_DOT];
    let xd = x[idx::X_DOT];
    let (st, ct) = (theta.sin(), theta.cos());

    let x_dd = (x[idx::F_X] - xd.scale(pl.c_x)).scale(1.0 / pl.usv_mass);

    let v_theta = xd * ct + r * td;
    let eta_theta = (v_theta.abs() * v_theta).scale(pl.c_theta);
    let v_r = xd * st + rd;
    let eta_r = (v_r.abs() * v_r).scale(pl.c_r);
    let eta_l = rd.scale(pl.c_l);

    let mbg = pl.m_bar * pl.g;
    // m r^2 th'' = m X'' r cos - 2 m r r' th' - mbar g r sin + r (f_th - eta_th); divided by m r
    let theta_dd = (x_dd * ct - (rd * td).scale(2.0) - st.scale(mbg / pl.m)
        + (x[idx::F_THETA] - eta_theta).scale(1.0 / pl.m))
        / r;
    let r_dd = ((x_dd * st + r * td * td).scale(pl.m) + ct.scale(mbg) - eta_r - eta_l
        + x[idx::F_R]
        + x[idx::F_L])
        .scale(1.0 / (pl.m + pl.winch_mass));
    [theta_dd, r_dd, x_dd]
}

/// Full vector field `x_dot = f_sys(x) + G u` for a resolved plant.
#[inline]
pub fn vector_field(s: &StateVector, u: &Vector4<f64>, pl: &Plant) -> StateVector {
    let arr: [f64; STATE_DIM] = (*s).into();
    let [th_dd, r_dd, x_dd] = accelerations(&arr, pl);
    let mut out = StateVector::zeros();
    out[idx::THETA] = s[idx::THETA_DOT];
    out[idx::R] = s[idx::R_DOT];
    out[idx::L] = s[idx::L_DOT];
    out[idx::X] = s[idx::X_DOT];
    out[idx::THETA_DOT] = th_dd;
    out[idx::R_DOT] = r_dd;
    out[idx::L_DOT] = r_dd;
    out[idx::X_DOT] = x_dd;
    for i in 0..4 {
        out[8 + i] = pl.inv_lag[i] * (u[i] - s[8 + i]);
    }
    out
}

/// State derivative under input `u`, with the uncertain entries of `xi`
/// overriding the corresponding constants of `p`.
pub fn drift(
    s: &SystemState,
    u: &ControlInput,
    xi: &UncertainParams,
    p: &ModelParams,
) -> Result<StateVector> {
    if !(s.r() > 0.0) {
        return Err(Error::NonPositiveRadius(s.r()));
    }
    Ok(vector_field(&s.0, &u.0, &Plant::new(p, xi)))
}

/// `d vector_field / d x` at `s`. The input enters affinely through the
/// constant lag matrix, so no input dependence appears here.
pub fn state_jacobian(s: &StateVector, pl: &Plant) -> StateMatrix {
    let mut jets = [Jet::<STATE_DIM>::constant(0.0); STATE_DIM];
    for (i, j) in jets.iter_mut().enumerate() {
        *j = Jet::variable(s[i], i);
    }
    let [th_dd, r_dd, x_dd] = accelerations(&jets, pl);
    let mut a = StateMatrix::zeros();
    for i in 0..4 {
        a[(i, 4 + i)] = 1.0;
        a[(8 + i, 8 + i)] = -pl.inv_lag[i];
    }
    for c in 0..STATE_DIM {
        a[(idx::THETA_DOT, c)] = th_dd.d[c];
        a[(idx::R_DOT, c)] = r_dd.d[c];
        a[(idx::L_DOT, c)] = r_dd.d[c];
        a[(idx::X_DOT, c)] = x_dd.d[c];
    }
    a
}

pub fn output(s: &SystemState) -> OutputY {
    let (st, ct) = s.theta().sin_cos();
    OutputY {
        x: s.usv_x() - s.r() * st,
        d: s.r() * ct,
        usv_x: s.usv_x(),
    }
}

/// `d output / d x` as a 3x12 matrix.
pub fn output_jacobian(s: &SystemState) -> SMatrix<f64, 3, STATE_DIM> {
    let (st, ct) = s.theta().sin_cos();
    let r = s.r();
    let mut j = SMatrix::<f64, 3, STATE_DIM>::zeros();
    j[(0, idx::THETA)] = -r * ct;
    j[(0, idx::R)] = -st;
    j[(0, idx::X)] = 1.0;
    j[(1, idx::THETA)] = -r * st;
    j[(1, idx::R)] = ct;
    j[(2, idx::X)] = 1.0;
    j
}

/// Kinetic plus potential energy of UUV and USV (winch inertia excluded).
pub fn mechanical_energy(s: &SystemState, p: &ModelParams) -> f64 {
    let (xd, dd) = cartesian_velocity(s);
    let d = s.r() * s.theta().cos();
    0.5 * p.m * (xd * xd + dd * dd) + 0.5 * p.usv_mass * s.usv_x_dot().powi(2) - p.m_bar * p.g * d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    fn nominal_xi() -> UncertainParams {
        UncertainParams::from_model(&ModelParams::default(), vec![])
    }

    #[test]
    fn polar_cartesian_examples() {
        let (x, d) = cartesian_from_polar(0.0, 2.0, 5.0).unwrap();
        assert_eq!((x, d), (5.0, 2.0));
        let (x, d) = cartesian_from_polar(FRAC_PI_2, 1.0, 0.0).unwrap();
        assert_relative_eq!(x, -1.0, epsilon = 1e-15);
        assert!(d.abs() < 1e-15);
        let (x, d) = cartesian_from_polar(FRAC_PI_6, 2.0, 1.0).unwrap();
        assert!(x.abs() < 1e-15);
        assert_relative_eq!(d, 3f64.sqrt(), epsilon = 1e-15);

        let (t, r) = polar_from_cartesian(5.0, 2.0, 5.0).unwrap();
        assert_eq!((t, r), (0.0, 2.0));
        let (t, r) = polar_from_cartesian(-1.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(t, FRAC_PI_2);
        assert_relative_eq!(r, 1.0);
        let (t, r) = polar_from_cartesian(0.0, 3f64.sqrt(), 1.0).unwrap();
        assert_relative_eq!(t, FRAC_PI_6, epsilon = 1e-15);
        assert_relative_eq!(r, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn polar_rejects_degenerate_radius() {
        assert!(matches!(cartesian_from_polar(0.0, 0.0, 1.0), Err(Error::NonPositiveRadius(_))));
        assert!(cartesian_from_polar(0.0, -1.0, 1.0).is_err());
        assert!(polar_from_cartesian(3.0, 0.0, 3.0).is_err());
    }

    #[test]
    fn drag_examples() {
        let p = ModelParams::default();
        let rest = SystemState::at_rest(0.3, 2.0, 0.0, [0.0; 4]);
        let eta = drag_forces(&rest, &p);
        assert_eq!((eta.eta_x, eta.eta_l, eta.eta_theta, eta.eta_r), (0.0, 0.0, 0.0, 0.0));

        let s = SystemState::new([0.0, 2.0, 2.0, 0.0], [0.0, 0.0, 0.0, 2.0], [0.0; 4]);
        assert_relative_eq!(drag_forces(&s, &p).eta_x, 2000.0);

        let s = SystemState::new([0.0, 2.0, 2.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0; 4]);
        assert_relative_eq!(drag_forces(&s, &p).eta_theta, 480.0);
    }

    #[test]
    fn hover_is_a_fixed_point() {
        let p = ModelParams::default();
        let f = [0.0, -p.hover_force(), 0.0, 0.0];
        let s = SystemState::at_rest(0.0, 2.0, 0.0, f);
        let u = ControlInput::new(f[0], f[1], f[2], f[3]);
        let dx = drift(&s, &u, &nominal_xi(), &p).unwrap();
        assert!(dx.amax() < 1e-9, "{dx}");
    }

    #[test]
    fn free_sink_and_usv_push() {
        let p = ModelParams::default();
        let s = SystemState::at_rest(0.0, 2.0, 0.0, [0.0; 4]);
        let dx = drift(&s, &ControlInput::zero(), &nominal_xi(), &p).unwrap();
        assert_relative_eq!(dx[idx::R_DOT], 5.88, epsilon = 1e-12);
        assert_relative_eq!(dx[idx::L_DOT], 5.88, epsilon = 1e-12);
        assert_eq!(dx[idx::THETA_DOT], 0.0);
        assert_eq!(dx[idx::X_DOT], 0.0);

        let s = SystemState::at_rest(0.0, 2.0, 0.0, [0.0, 0.0, 0.0, 1000.0]);
        let dx = drift(&s, &ControlInput::zero(), &nominal_xi(), &p).unwrap();
        assert_relative_eq!(dx[idx::X_DOT], 1000.0 / 1075.0, epsilon = 1e-12);
    }

    #[test]
    fn drift_rejects_nonpositive_radius() {
        let p = ModelParams::default();
        let s = SystemState::at_rest(0.0, 0.0, 0.0, [0.0; 4]);
        assert!(drift(&s, &ControlInput::zero(), &nominal_xi(), &p).is_err());
    }

    #[test]
    fn xi_overrides_only_uncertain_entries() {
        let p = ModelParams::default();
        let mut xi = nominal_xi();
        xi.m_bar = 45.0;
        let pl = Plant::new(&p, &xi);
        assert_eq!(pl.m_bar, 45.0);
        assert_eq!(pl.usv_mass, p.usv_mass);
        let s = SystemState::at_rest(0.0, 2.0, 0.0, [0.0; 4]);
        let dx = drift(&s, &ControlInput::zero(), &xi, &p).unwrap();
        assert_relative_eq!(dx[idx::R_DOT], 45.0 * 9.8 / 150.0, epsilon = 1e-12);
    }

    #[test]
    fn output_examples() {
        let p = ModelParams::default();
        let y = output(&SystemState::hanging(0.0, 2.0, &p));
        assert_eq!((y.x, y.d, y.usv_x), (0.0, 2.0, 0.0));
        let y = output(&SystemState::at_rest(FRAC_PI_2, 1.0, 0.0, [0.0; 4]));
        assert_relative_eq!(y.x, -1.0);
        assert!(y.d.abs() < 1e-15);
        let y = output(&SystemState::at_rest(FRAC_PI_6, 2.0, 1.0, [0.0; 4]));
        assert!(y.x.abs() < 1e-15);
        assert_relative_eq!(y.d, 3f64.sqrt(), epsilon = 1e-15);
        assert_eq!(y.usv_x, 1.0);
    }

    #[test]
    fn energy_examples() {
        let p = ModelParams::default();
        let s = SystemState::at_rest(FRAC_PI_2, 1.0, 0.0, [0.0; 4]);
        assert!(mechanical_energy(&s, &p).abs() < 1e-12);
        let s = SystemState::at_rest(0.0, 2.0, 0.0, [0.0; 4]);
        assert_relative_eq!(mechanical_energy(&s, &p), -1764.0, epsilon = 1e-9);
        // d = 0 with r > 0 requires theta = pi/2; r_dot = 1 then gives x_dot = -1
        let s = SystemState::new([FRAC_PI_2, 1.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0], [0.0; 4]);
        assert_relative_eq!(mechanical_energy(&s, &p), 60.0, epsilon = 1e-9);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = ModelParams::default();
        let pl = Plant::nominal(&p);
        let s = SystemState::new([0.4, 1.7, 1.7, 0.3], [-0.2, 0.3, 0.3, 0.5], [20.0, -300.0, -500.0, 80.0]);
        let u = Vector4::new(10.0, -20.0, -800.0, 5.0);
        let a = state_jacobian(&s.0, &pl);
        let h = 1e-6;
        for c in 0..STATE_DIM {
            let mut sp = s.0;
            let mut sm = s.0;
            sp[c] += h;
            sm[c] -= h;
            let col = (vector_field(&sp, &u, &pl) - vector_field(&sm, &u, &pl)) / (2.0 * h);
            for r in 0..STATE_DIM {
                assert!((a[(r, c)] - col[r]).abs() < 1e-5 * (1.0 + col[r].abs()), "({r},{c})");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn state(q: [f64; 4], qd: [f64; 4], f: [f64; 4]) -> SystemState {
            SystemState::new(q, qd, f)
        }

        proptest! {
            #[test]
            fn polar_round_trip(theta in -PI + 1e-9..=PI, r in 0.1f64..100.0, usv in -50.0f64..50.0) {
                let (x, d) = cartesian_from_polar(theta, r, usv).unwrap();
                let (t2, r2) = polar_from_cartesian(x, d, usv).unwrap();
                prop_assert!((r2 - r).abs() <= 1e-12 * r);
                prop_assert!(wrap_angle(t2 - theta).abs() <= 1e-12 * (1.0 + theta.abs()));
            }

            #[test]
            fn drift_is_input_affine(
                th in -1.5f64..1.5, r in 0.5f64..8.0, td in -1.0f64..1.0, rd in -1.0f64..1.0, xd in -1.0f64..1.0,
                a in prop::array::uniform4(-500.0f64..500.0), b in prop::array::uniform4(-500.0f64..500.0),
                ka in -3.0f64..3.0, kb in -3.0f64..3.0,
            ) {
                let p = ModelParams::default();
                let xi = nominal_xi();
                let s = state([th, r, r, 0.3], [td, rd, rd, xd], [10.0, -300.0, -400.0, 50.0]);
                let d = |u: Vector4<f64>| drift(&s, &ControlInput(u), &xi, &p).unwrap();
                let (ua, ub) = (Vector4::from(a), Vector4::from(b));
                let base = d(Vector4::zeros());
                let lhs = d(ua * ka + ub * kb) - base;
                let rhs = (d(ua) - base) * ka + (d(ub) - base) * kb;
                prop_assert!((lhs - rhs).amax() < 1e-10 * (1.0 + rhs.amax()));
            }

            #[test]
            fn mirror_symmetry(
                th in -1.5f64..1.5, r in 0.5f64..8.0, td in -1.0f64..1.0, rd in -1.0f64..1.0, xd in -1.0f64..1.0,
                f in prop::array::uniform4(-500.0f64..500.0),
            ) {
                let p = ModelParams::default();
                let pl = Plant::nominal(&p);
                let s = state([th, r, r, 0.0], [td, rd, rd, xd], f);
                let m = state([-th, r, r, 0.0], [-td, rd, rd, -xd], [-f[0], f[1], f[2], -f[3]]);
                let a = accelerations(&<[f64; STATE_DIM]>::from(s.0), &pl);
                let b = accelerations(&<[f64; STATE_DIM]>::from(m.0), &pl);
                prop_assert!((a[0] + b[0]).abs() <= 1e-12 * (1.0 + a[0].abs()));
                prop_assert!((a[1] - b[1]).abs() <= 1e-12 * (1.0 + a[1].abs()));
                prop_assert!((a[2] + b[2]).abs() <= 1e-12 * (1.0 + a[2].abs()));
            }
        }
    }
}
