//! Feedforward plans, smooth saturation and the PD correction law.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wrap_angle, ControlInput, ModelParams, SystemState};
use crate::stochastic::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HoldMode {
    #[default]
    ZeroOrder,
    Linear,
}

/// Piecewise input `u(t)` on uniformly spaced knots starting at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPlan {
    pub knot_spacing: f64,
    pub t_f: f64,
    pub hold: HoldMode,
    pub values: Vec<ControlInput>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanSidecar {
    hold: HoldMode,
    t_f: f64,
    knot_spacing: f64,
}

// guards floor() against k * dt landing a hair below a knot time
const KNOT_EPS: f64 = 1e-9;

impl ControlPlan {
    pub fn new(values: Vec<ControlInput>, knot_spacing: f64, t_f: f64, hold: HoldMode) -> Result<Self> {
        let plan = ControlPlan {
            knot_spacing,
            t_f,
            hold,
            values,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Number of knots needed to span `[0, t_f]` in the given hold mode.
    pub fn knot_count(knot_spacing: f64, t_f: f64, hold: HoldMode) -> usize {
        let n = ((t_f / knot_spacing) - KNOT_EPS).ceil().max(1.0) as usize;
        match hold {
            HoldMode::ZeroOrder => n,
            HoldMode::Linear => n + 1,
        }
    }

    pub fn constant(u: ControlInput, knot_spacing: f64, t_f: f64, hold: HoldMode) -> Result<Self> {
        if !(knot_spacing > 0.0 && t_f > 0.0) {
            return Err(Error::invalid("knot spacing and t_f must be positive"));
        }
        let n = Self::knot_count(knot_spacing, t_f, hold);
        ControlPlan::new(vec![u; n], knot_spacing, t_f, hold)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.knot_spacing > 0.0 && self.knot_spacing.is_finite()) {
            return Err(Error::invalid("knot spacing must be positive"));
        }
        if !(self.t_f > 0.0 && self.t_f.is_finite()) {
            return Err(Error::invalid("plan horizon must be positive"));
        }
        if self.values.is_empty() {
            return Err(Error::invalid("plan has no knots"));
        }
        if (self.values.len() - 1) as f64 * self.knot_spacing > self.t_f + KNOT_EPS {
            return Err(Error::invalid("plan knots extend beyond t_f"));
        }
        if self.values.iter().any(|u| !u.is_finite()) {
            return Err(Error::invalid("plan has non-finite knot values"));
        }
        Ok(())
    }

    pub fn check_covers(&self, t_f: f64) -> Result<()> {
        if self.t_f + KNOT_EPS < t_f {
            return Err(Error::invalid(format!("plan covers [0, {}] but [0, {t_f}] is required", self.t_f)));
        }
        Ok(())
    }

    pub fn knot_times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|k| k as f64 * self.knot_spacing)
    }

    /// Knot indices and weights that produce `u(t)`; the second weight is
    /// zero in zero-order hold.
    pub fn weights(&self, t: f64) -> [(usize, f64); 2] {
        let last = self.values.len() - 1;
        let s = (t / self.knot_spacing).max(0.0);
        let k = ((s + KNOT_EPS).floor() as usize).min(last);
        match self.hold {
            HoldMode::ZeroOrder => [(k, 1.0), (k, 0.0)],
            HoldMode::Linear => {
                if k == last {
                    [(k, 1.0), (k, 0.0)]
                } else {
                    let w = (s - k as f64).clamp(0.0, 1.0);
                    [(k, 1.0 - w), (k + 1, w)]
                }
            }
        }
    }

    pub(crate) fn value_at_unchecked(&self, t: f64) -> ControlInput {
        let [(i, wi), (j, wj)] = self.weights(t);
        if wj == 0.0 {
            self.values[i]
        } else {
            ControlInput(self.values[i].0 * wi + self.values[j].0 * wj)
        }
    }

    pub fn value_at(&self, t: f64) -> Result<ControlInput> {
        if !(t >= -KNOT_EPS && t <= self.t_f + KNOT_EPS) {
            return Err(Error::OutsideHorizon { t, t_f: self.t_f });
        }
        Ok(self.value_at_unchecked(t))
    }

    /// Flattened knot values, knot-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|u| u.0.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        for (k, u) in self.values.iter_mut().enumerate() {
            for c in 0..4 {
                u.0[c] = flat[4 * k + c];
            }
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "u_theta", "u_r", "u_l", "u_X"])?;
        for (t, u) in self.knot_times().zip(&self.values) {
            wr.write_record([t.to_string(), u.0[0].to_string(), u.0[1].to_string(), u.0[2].to_string(), u.0[3].to_string()])?;
        }
        wr.flush().map_err(|e| Error::io("<plan csv>", e))?;
        Ok(())
    }

    /// Sidecar path holding hold mode and horizon: `plan.csv` -> `plan.json`.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }

    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let f = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(f)?;
        let side = Self::sidecar_path(csv_path);
        let meta = PlanSidecar {
            hold: self.hold,
            t_f: self.t_f,
            knot_spacing: self.knot_spacing,
        };
        std::fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(side, e))
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(csv_path);
        let meta_text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: PlanSidecar = serde_json::from_str(&meta_text)?;
        let f = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        Self::read_csv(f, meta.knot_spacing, meta.t_f, meta.hold)
    }

    pub fn read_csv<R: Read>(r: R, knot_spacing: f64, t_f: f64, hold: HoldMode) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut values = Vec::new();
        for (k, rec) in rd.records().enumerate() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::invalid(format!("bad number {f:?}: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != 5 {
                return Err(Error::invalid("plan CSV rows need 5 columns"));
            }
            if (v[0] - k as f64 * knot_spacing).abs() > 1e-6 {
                return Err(Error::invalid(format!("knot {k} at t = {} is off the uniform grid", v[0])));
            }
            values.push(ControlInput::new(v[1], v[2], v[3], v[4]));
        }
        ControlPlan::new(values, knot_spacing, t_f, hold)
    }
}

/// `u_max * tanh(u / u_max)` on every channel.
pub fn smooth_sat(u: &ControlInput, u_max: f64) -> ControlInput {
    ControlInput(u.0.map(|v| u_max * (v / u_max).tanh()))
}

/// Per-channel saturation `c + b tanh((v - c) / b)` with center `c` and
/// half-width `b`; a `None` bound leaves the channel unsaturated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorLimits {
    pub bounds: [Option<f64>; 4],
    #[serde(default)]
    pub centers: [f64; 4],
}

/// Half-width of the USV surge force (N).
pub const USV_FORCE_MAX: f64 = 1000.0;

impl Default for ActuatorLimits {
    fn default() -> Self {
        ActuatorLimits::thrusters(400.0)
    }
}

impl ActuatorLimits {
    /// Only the two UUV thrusters bounded, by `u_max`.
    pub fn thrusters(u_max: f64) -> Self {
        ActuatorLimits {
            bounds: [Some(u_max), Some(u_max), None, None],
            centers: [0.0; 4],
        }
    }

    /// Box `[-u_max, u_max]^4`.
    pub fn uniform(u_max: f64) -> Self {
        ActuatorLimits {
            bounds: [Some(u_max); 4],
            centers: [0.0; 4],
        }
    }

    /// Thrusters within `u_max`, winch tension between zero and twice the
    /// apparent weight, USV within [`USV_FORCE_MAX`].
    pub fn plant(p: &ModelParams) -> Self {
        let w = p.hover_force();
        ActuatorLimits {
            bounds: [Some(p.u_max), Some(p.u_max), Some(w), Some(USV_FORCE_MAX)],
            centers: [0.0, 0.0, -w, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.iter().flatten().any(|b| !(*b > 0.0)) || self.centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("actuator bounds must be positive and centers finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn saturate(&self, v: &Vector4<f64>) -> Vector4<f64> {
        Vector4::from_fn(|i, _| match self.bounds[i] {
            Some(b) => {
                let c = self.centers[i];
                c + b * ((v[i] - c) / b).tanh()
            }
            None => v[i],
        })
    }

    /// Componentwise derivative of [`ActuatorLimits::saturate`].
    #[inline]
    pub fn saturate_slope(&self, v: &Vector4<f64>) -> Vector4<f64> {
        Vector4::from_fn(|i, _| match self.bounds[i] {
            Some(b) => {
                let t = ((v[i] - self.centers[i]) / b).tanh();
                1.0 - t * t
            }
            None => 1.0,
        })
    }

    /// Hard clip to the bounds (used where a box, not a smooth map, is needed).
    pub fn clip(&self, v: &Vector4<f64>) -> Vector4<f64> {
        Vector4::from_fn(|i, _| match self.bounds[i] {
            Some(b) => {
                let c = self.centers[i];
                v[i].clamp(c - b, c + b)
            }
            None => v[i],
        })
    }
}

/// PD correction `K = (K_P  K_D  0)` acting on the error to the nominal state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainRepr", into = "GainRepr")]
pub struct FeedbackGain {
    pub kp: Matrix4<f64>,
    pub kd: Matrix4<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainRepr {
    kp: [[f64; 4]; 4],
    kd: [[f64; 4]; 4],
}

impl TryFrom<GainRepr> for FeedbackGain {
    type Error = Error;
    fn try_from(r: GainRepr) -> Result<Self> {
        let g = FeedbackGain {
            kp: Matrix4::from_fn(|i, j| r.kp[i][j]),
            kd: Matrix4::from_fn(|i, j| r.kd[i][j]),
        };
        if g.kp.iter().chain(g.kd.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("feedback gain has non-finite entries"));
        }
        Ok(g)
    }
}

impl From<FeedbackGain> for GainRepr {
    fn from(g: FeedbackGain) -> Self {
        let rows = |m: &Matrix4<f64>| std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        GainRepr {
            kp: rows(&g.kp),
            kd: rows(&g.kd),
        }
    }
}

impl FeedbackGain {
    pub fn diagonal(kp: f64, kd: f64) -> Self {
        FeedbackGain {
            kp: Matrix4::identity() * kp,
            kd: Matrix4::identity() * kd,
        }
    }

    /// `K_P = 800 I`, `K_D = 80 I`.
    pub fn table2() -> Self {
        FeedbackGain::diagonal(800.0, 80.0)
    }

    pub fn zero() -> Self {
        FeedbackGain::diagonal(0.0, 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.kp.iter().chain(self.kd.iter()).all(|&v| v == 0.0)
    }

    /// Correction term `K_P e_q + K_D e_qdot` with the angle error wrapped.
    pub fn correction(&self, nominal: &SystemState, x: &SystemState) -> Vector4<f64> {
        let mut eq = nominal.q() - x.q();
        eq[0] = wrap_angle(eq[0]);
        self.kp * eq + self.kd * (nominal.q_dot() - x.q_dot())
    }
}

/// Saturated input `sat(u + K (x_nom - x))` for an already interpolated `u`.
#[inline]
pub fn feedback_law_at(
    u: &ControlInput,
    nominal: &SystemState,
    x: &SystemState,
    gain: &FeedbackGain,
    limits: &ActuatorLimits,
) -> ControlInput {
    ControlInput(limits.saturate(&(u.0 + gain.correction(nominal, x))))
}

pub fn feedback_law(
    plan: &ControlPlan,
    nominal: &Trajectory,
    x: &SystemState,
    t: f64,
    gain: &FeedbackGain,
    limits: &ActuatorLimits,
) -> Result<ControlInput> {
    let u = plan.value_at(t)?;
    let k = (t / nominal.dt).round();
    if k < 0.0 || k as usize >= nominal.len() || (k * nominal.dt - t).abs() > 1e-9 {
        return Err(Error::invalid(format!("t = {t} is not on the nominal grid")));
    }
    Ok(feedback_law_at(&u, &nominal.states[k as usize], x, gain, limits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use approx::assert_relative_eq;

    #[test]
    fn interpolation_examples() {
        let u0 = ControlInput::new(1.0, 2.0, 3.0, 4.0);
        let single = ControlPlan::new(vec![u0], 1.0, 1.0, HoldMode::ZeroOrder).unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(single.value_at(t).unwrap(), u0);
        }

        let lin = ControlPlan::new(vec![ControlInput::zero(), ControlInput::new(4.0, 0.0, 0.0, 0.0)], 1.0, 1.0, HoldMode::Linear).unwrap();
        assert_eq!(lin.value_at(0.5).unwrap(), ControlInput::new(2.0, 0.0, 0.0, 0.0));

        let zoh = ControlPlan::new(vec![ControlInput::zero(), ControlInput::new(4.0, 0.0, 0.0, 0.0)], 1.0, 2.0, HoldMode::ZeroOrder).unwrap();
        assert_eq!(zoh.value_at(1.0).unwrap(), ControlInput::new(4.0, 0.0, 0.0, 0.0));
        assert_eq!(zoh.value_at(0.999).unwrap(), ControlInput::zero());
    }

    #[test]
    fn knot_boundary_survives_grid_rounding() {
        let plan = ControlPlan::new((0..48).map(|k| ControlInput::new(k as f64, 0.0, 0.0, 0.0)).collect(), 0.25, 12.0, HoldMode::ZeroOrder).unwrap();
        for k in 0..=240usize {
            let t = k as f64 * 0.05;
            let expect = ((k / 5).min(47)) as f64;
            assert_eq!(plan.value_at(t).unwrap().0[0], expect, "k = {k}");
        }
    }

    #[test]
    fn interpolation_rejects_outside_horizon() {
        let plan = ControlPlan::constant(ControlInput::zero(), 0.25, 12.0, HoldMode::ZeroOrder).unwrap();
        assert!(matches!(plan.value_at(-0.1), Err(Error::OutsideHorizon { .. })));
        assert!(plan.value_at(12.1).is_err());
    }

    #[test]
    fn smooth_sat_examples() {
        assert_eq!(smooth_sat(&ControlInput::zero(), 400.0), ControlInput::zero());
        let big = smooth_sat(&ControlInput::new(1e6, 1e6, 1e6, 1e6), 400.0);
        assert!(big.0.iter().all(|v| (v - 400.0).abs() < 1e-6));
        let one = smooth_sat(&ControlInput::new(400.0, 0.0, 0.0, 0.0), 400.0);
        assert_relative_eq!(one.0[0], 304.6376, epsilon = 1e-4);
        assert_eq!(one.0[1], 0.0);
    }

    #[test]
    fn default_limits_leave_winch_free() {
        let p = ModelParams::default();
        let h = ControlInput::hover(&p);
        assert_eq!(ActuatorLimits::default().saturate(&h.0), h.0);
    }

    #[test]
    fn plant_limits_center_the_winch_on_hover() {
        let p = ModelParams::default();
        let l = ActuatorLimits::plant(&p);
        let h = ControlInput::hover(&p);
        assert_eq!(l.saturate(&h.0), h.0);
        assert_eq!(l.saturate_slope(&h.0), Vector4::new(1.0, 1.0, 1.0, 1.0));
        let big = l.saturate(&Vector4::new(-1e6, 1e6, 1e6, -1e6));
        assert!((big - Vector4::new(-400.0, 400.0, 0.0, -USV_FORCE_MAX)).amax() < 1e-6);
        assert_eq!(l.clip(&Vector4::new(0.0, 0.0, -5000.0, 0.0))[2], -2.0 * p.hover_force());
        // slope matches a central difference
        let v = Vector4::new(120.0, -300.0, -1200.0, 700.0);
        let fd = (l.saturate(&v.add_scalar(1e-4)) - l.saturate(&v.add_scalar(-1e-4))) / 2e-4;
        assert!((fd - l.saturate_slope(&v)).amax() < 1e-7);
    }

    #[test]
    fn feedback_law_examples() {
        let p = ModelParams::default();
        let limits = ActuatorLimits::default();
        let plan = ControlPlan::constant(ControlInput::new(50.0, -20.0, -880.0, 3.0), 0.25, 1.0, HoldMode::ZeroOrder).unwrap();
        let sim = crate::stochastic::Simulator::new(p.clone(), limits, crate::stochastic::DiffusionSpec::zero(), 0.05, 1.0).unwrap();
        let xi = crate::stochastic::UncertainParams::from_model(&p, vec![]);
        let nominal = sim.nominal_rollout(&plan, &xi, &SystemState::hanging(0.0, 2.0, &p)).unwrap();
        let xn = nominal.states[4];
        let u = plan.value_at(0.2).unwrap();
        let expect = ControlInput(limits.saturate(&u.0));
        assert_eq!(feedback_law(&plan, &nominal, &xn, 0.2, &FeedbackGain::table2(), &limits).unwrap(), expect);

        let other = SystemState::hanging(1.0, 3.0, &p);
        assert_eq!(feedback_law(&plan, &nominal, &other, 0.2, &FeedbackGain::zero(), &limits).unwrap(), expect);

        // q error (0, 0.1, 0.1, 0) with K_P = 800 I
        let mut x = SystemState::hanging(0.0, 2.0, &p);
        let mut nom = x;
        nom.0[1] += 0.1;
        nom.0[2] += 0.1;
        x.0[0] = 0.0;
        let c = FeedbackGain::table2().correction(&nom, &x);
        assert_relative_eq!(c, Vector4::new(0.0, 80.0, 80.0, 0.0), epsilon = 1e-9);
    }

    #[test]
    fn angle_error_is_wrapped() {
        let p = ModelParams::default();
        let nom = SystemState::at_rest(3.1, 2.0, 0.0, [0.0; 4]);
        let x = SystemState::at_rest(-3.1, 2.0, 0.0, [0.0; 4]);
        let c = FeedbackGain::diagonal(1.0, 0.0).correction(&nom, &x);
        assert_relative_eq!(c[0], 6.2 - 2.0 * std::f64::consts::PI, epsilon = 1e-12);
        let _ = p;
    }

    #[test]
    fn plan_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.csv");
        let mut plan = ControlPlan::constant(ControlInput::new(0.1, 0.2, -882.0, 0.3), 0.25, 12.0, HoldMode::Linear).unwrap();
        plan.values[7].0[2] = -1.0 / 3.0;
        plan.save(&path).unwrap();
        assert_eq!(ControlPlan::load(&path).unwrap(), plan);
    }
}
