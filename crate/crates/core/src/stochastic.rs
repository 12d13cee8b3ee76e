//! Uncertainty sampling, Euler-Maruyama propagation and rollouts.

use std::io::{Read, Write};

use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::{feedback_law_at, ActuatorLimits, ControlPlan, FeedbackGain};
use crate::error::{Error, Result};
use crate::model::{
    idx, output, vector_field, ControlInput, ModelParams, OutputY, Plant, StateMatrix, StateVector,
    SystemState, R_MIN, STATE_DIM,
};

/// Circular obstacle in the `(x, d)` plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub x: f64,
    pub d: f64,
    /// Radius of the enclosing circle.
    pub a: f64,
}

impl Obstacle {
    pub fn new(x: f64, d: f64, a: f64) -> Self {
        Obstacle { x, d, a }
    }

    /// Signed distance from `(x, d)` to the obstacle surface (negative inside).
    pub fn clearance(&self, x: f64, d: f64) -> f64 {
        (x - self.x).hypot(d - self.d) - self.a
    }
}

/// One realization of the uncertain parameters: plant entries and obstacles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertainParams {
    pub m: f64,
    pub m_bar: f64,
    pub c_theta: f64,
    pub c_r: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl UncertainParams {
    pub fn from_model(p: &ModelParams, obstacles: Vec<Obstacle>) -> Self {
        UncertainParams {
            m: p.m,
            m_bar: p.m_bar,
            c_theta: p.c_theta,
            c_r: p.c_r,
            obstacles,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [("m", self.m), ("m_bar", self.m_bar), ("c_theta", self.c_theta), ("c_r", self.c_r)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{n} must be positive, got {v}")));
            }
        }
        for o in &self.obstacles {
            if !(o.a > 0.0 && o.d > 0.0 && o.x.is_finite()) {
                return Err(Error::invalid(format!("obstacle needs a > 0 and d > 0, got {o:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistributionKind {
    #[default]
    Uniform,
    /// Variance-matched normal, truncated at three standard deviations.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySpec {
    /// Relative half-width of the plant-parameter distributions.
    pub epsilon: f64,
    pub obstacle_pos_rel_err: f64,
    pub obstacle_size_rel_err: f64,
    pub expected: UncertainParams,
    #[serde(default)]
    pub distribution: DistributionKind,
    /// Draw one drag coefficient for both UUV channels (`c = c_r = c_theta`).
    #[serde(default = "default_true")]
    pub tied_drag: bool,
}

fn default_true() -> bool {
    true
}

impl UncertaintySpec {
    pub fn new(p: &ModelParams, obstacles: Vec<Obstacle>, epsilon: f64) -> Self {
        UncertaintySpec {
            epsilon,
            obstacle_pos_rel_err: 0.30,
            obstacle_size_rel_err: 0.10,
            expected: UncertainParams::from_model(p, obstacles),
            distribution: DistributionKind::Uniform,
            tied_drag: true,
        }
    }

    fn support_factor(&self) -> f64 {
        match self.distribution {
            DistributionKind::Uniform => 1.0,
            DistributionKind::Gaussian => 3f64.sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        for (n, v) in [("obstacle_pos_rel_err", self.obstacle_pos_rel_err), ("obstacle_size_rel_err", self.obstacle_size_rel_err)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{n} must lie in [0, 1), got {v}")));
            }
        }
        self.expected.validate()?;
        let k = self.support_factor();
        if k * self.epsilon >= 1.0 {
            return Err(Error::invalid(format!(
                "epsilon {} admits non-positive masses or drag coefficients",
                self.epsilon
            )));
        }
        if k * self.obstacle_size_rel_err >= 1.0 || k * self.obstacle_pos_rel_err >= 1.0 {
            return Err(Error::invalid("obstacle error admits non-positive sizes or depths"));
        }
        Ok(())
    }
}

pub fn expected_xi(spec: &UncertaintySpec) -> UncertainParams {
    spec.expected.clone()
}

/// Draw one symmetric perturbation of relative half-width `rel` around `center`.
fn perturb<R: Rng>(rng: &mut R, kind: DistributionKind, center: f64, half_width: f64) -> f64 {
    if half_width == 0.0 {
        return center;
    }
    match kind {
        DistributionKind::Uniform => center + half_width * (2.0 * rng.random::<f64>() - 1.0),
        DistributionKind::Gaussian => {
            let sigma = half_width / 3f64.sqrt();
            loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= 3.0 {
                    return center + sigma * z;
                }
            }
        }
    }
}

pub fn sample_xi_with<R: Rng>(spec: &UncertaintySpec, rng: &mut R) -> UncertainParams {
    let e = &spec.expected;
    let k = spec.distribution;
    let eps = spec.epsilon;
    let m = perturb(rng, k, e.m, eps * e.m);
    let m_bar = perturb(rng, k, e.m_bar, eps * e.m_bar);
    let c_theta = perturb(rng, k, e.c_theta, eps * e.c_theta);
    let c_r = if spec.tied_drag {
        c_theta * (e.c_r / e.c_theta)
    } else {
        perturb(rng, k, e.c_r, eps * e.c_r)
    };
    let obstacles = e
        .obstacles
        .iter()
        .map(|o| Obstacle {
            x: perturb(rng, k, o.x, spec.obstacle_pos_rel_err * o.x.abs()),
            d: perturb(rng, k, o.d, spec.obstacle_pos_rel_err * o.d.abs()),
            a: perturb(rng, k, o.a, spec.obstacle_size_rel_err * o.a),
        })
        .collect();
    UncertainParams {
        m,
        m_bar,
        c_theta,
        c_r,
        obstacles,
    }
}

/// Deterministic draw of the uncertain parameters.
pub fn sample_xi(spec: &UncertaintySpec, seed: u64) -> Result<UncertainParams> {
    spec.validate()?;
    Ok(sample_xi_with(spec, &mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Constant diffusion gain multiplying the 12-dimensional Wiener increment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiffusionRepr", into = "DiffusionRepr")]
pub struct DiffusionSpec {
    gain: StateMatrix,
    zero: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffusionRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<Vec<f64>>>,
    /// Shorthand for a diagonal gain on the four velocity rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    velocity_std: Option<[f64; 4]>,
}

impl TryFrom<DiffusionRepr> for DiffusionSpec {
    type Error = Error;
    fn try_from(r: DiffusionRepr) -> Result<Self> {
        match (r.matrix, r.velocity_std) {
            (Some(m), None) => {
                if m.len() != STATE_DIM || m.iter().any(|row| row.len() != STATE_DIM) {
                    return Err(Error::invalid("diffusion matrix must be 12x12"));
                }
                DiffusionSpec::from_matrix(StateMatrix::from_fn(|i, j| m[i][j]))
            }
            (None, Some(std)) => {
                if std.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("diffusion std must be finite"));
                }
                Ok(DiffusionSpec::velocity_diagonal(std))
            }
            _ => Err(Error::invalid("diffusion needs exactly one of `matrix` or `velocity_std`")),
        }
    }
}

impl From<DiffusionSpec> for DiffusionRepr {
    fn from(d: DiffusionSpec) -> Self {
        let std: [f64; 4] = std::array::from_fn(|i| d.gain[(4 + i, 4 + i)]);
        if d == DiffusionSpec::velocity_diagonal(std) {
            return DiffusionRepr {
                matrix: None,
                velocity_std: Some(std),
            };
        }
        DiffusionRepr {
            matrix: Some(
                (0..STATE_DIM)
                    .map(|i| (0..STATE_DIM).map(|j| d.gain[(i, j)]).collect())
                    .collect(),
            ),
            velocity_std: None,
        }
    }
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        DiffusionSpec::velocity_diagonal([0.01; 4])
    }
}

impl DiffusionSpec {
    pub fn from_matrix(gain: StateMatrix) -> Result<Self> {
        if gain.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("diffusion matrix has non-finite entries"));
        }
        let zero = gain.iter().all(|&v| v == 0.0);
        Ok(DiffusionSpec { gain, zero })
    }

    pub fn zero() -> Self {
        DiffusionSpec {
            gain: StateMatrix::zeros(),
            zero: true,
        }
    }

    /// Diagonal gain on the four velocity rows only.
    pub fn velocity_diagonal(std: [f64; 4]) -> Self {
        let mut gain = StateMatrix::zeros();
        for (i, s) in std.iter().enumerate() {
            gain[(4 + i, 4 + i)] = *s;
        }
        DiffusionSpec::from_matrix(gain).expect("finite diagonal")
    }

    pub fn matrix(&self) -> &StateMatrix {
        &self.gain
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }
}

/// Pre-drawn Wiener increments, each `N(0, dt I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealization {
    pub seed: u64,
    pub increments: Vec<StateVector>,
}

impl NoiseRealization {
    pub fn generate(seed: u64, steps: usize, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = dt.sqrt();
        let increments = (0..steps)
            .map(|_| StateVector::from_fn(|_, _| s * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        NoiseRealization { seed, increments }
    }

    pub fn zero(steps: usize) -> Self {
        NoiseRealization {
            seed: 0,
            increments: vec![StateVector::zeros(); steps],
        }
    }
}

/// Uniformly sampled rollout on `[0, t_f]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    /// Input applied at each grid point (the last one is recorded, not applied).
    pub controls: Vec<ControlInput>,
    pub outputs: Vec<OutputY>,
    /// Index of the first state past the radius floor, if any.
    pub invalid_from: Option<usize>,
    /// Optional per-step diagnostic columns appended to CSV exports.
    pub diagnostics: Vec<(String, Vec<f64>)>,
}

impl Trajectory {
    pub fn is_valid(&self) -> bool {
        self.invalid_from.is_none()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn t_f(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn final_output(&self) -> OutputY {
        *self.outputs.last().expect("non-empty trajectory")
    }

    pub fn row_valid(&self, k: usize) -> bool {
        self.invalid_from.is_none_or(|i| k < i)
    }

    pub const CSV_HEADER: [&'static str; 20] = [
        "t", "theta", "r", "l", "X", "theta_dot", "r_dot", "l_dot", "X_dot", "f_theta", "f_r", "f_l", "f_X", "x", "d",
        "u_theta", "u_r", "u_l", "u_X", "valid",
    ];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = Self::CSV_HEADER.iter().map(|s| s.to_string()).collect();
        header.extend(self.diagnostics.iter().map(|(n, _)| n.clone()));
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let s = self.states[k].wrapped();
            let y = &self.outputs[k];
            let u = &self.controls[k];
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            rec.push(self.times[k].to_string());
            rec.extend(s.0.iter().map(|v| v.to_string()));
            rec.push(y.x.to_string());
            rec.push(y.d.to_string());
            rec.extend(u.0.iter().map(|v| v.to_string()));
            rec.push(if self.row_valid(k) { "1" } else { "0" }.to_string());
            rec.extend(self.diagnostics.iter().map(|(_, c)| c[k].to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.len() < Self::CSV_HEADER.len() || header.iter().zip(Self::CSV_HEADER).any(|(a, b)| a != b) {
            return Err(Error::invalid("trajectory CSV header mismatch"));
        }
        let extra: Vec<String> = header.iter().skip(Self::CSV_HEADER.len()).map(String::from).collect();
        let mut tr = Trajectory {
            dt: 0.0,
            times: vec![],
            states: vec![],
            controls: vec![],
            outputs: vec![],
            invalid_from: None,
            diagnostics: extra.into_iter().map(|n| (n, vec![])).collect(),
        };
        for (k, rec) in rd.records().enumerate() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::invalid(format!("bad number {f:?}: {e}"))))
                .collect::<Result<_>>()?;
            tr.times.push(v[0]);
            tr.states.push(SystemState(StateVector::from_fn(|i, _| v[1 + i])));
            tr.outputs.push(OutputY::new(v[13], v[14], v[4]));
            tr.controls.push(ControlInput::new(v[15], v[16], v[17], v[18]));
            if v[19] == 0.0 && tr.invalid_from.is_none() {
                tr.invalid_from = Some(k);
            }
            for (c, (_, col)) in tr.diagnostics.iter_mut().enumerate() {
                col.push(v[20 + c]);
            }
        }
        if tr.times.len() >= 2 {
            tr.dt = tr.times[1] - tr.times[0];
        }
        Ok(tr)
    }
}

/// One Euler-Maruyama step on a resolved plant, with the tether re-tautened.
#[inline]
pub(crate) fn em_step_raw(
    x: &StateVector,
    u: &Vector4<f64>,
    pl: &Plant,
    diffusion: &DiffusionSpec,
    dt: f64,
    dw: Option<&StateVector>,
) -> StateVector {
    let mut next = x + vector_field(x, u, pl) * dt;
    if let (false, Some(dw)) = (diffusion.is_zero(), dw) {
        next += diffusion.matrix() * dw;
    }
    next[idx::L] = next[idx::R];
    next[idx::L_DOT] = next[idx::R_DOT];
    next
}

/// `x' = x + b(x, u, xi) dt + D dW`.
#[allow(clippy::too_many_arguments)]
pub fn em_step(
    state: &SystemState,
    u: &ControlInput,
    xi: &UncertainParams,
    diffusion: &DiffusionSpec,
    dt: f64,
    dw: &StateVector,
    p: &ModelParams,
) -> Result<SystemState> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !(state.r() > R_MIN) {
        return Err(Error::NonPositiveRadius(state.r()));
    }
    let next = SystemState(em_step_raw(&state.0, &u.0, &Plant::new(p, xi), diffusion, dt, Some(dw)));
    if !(next.r() > R_MIN) || !next.is_finite() {
        return Err(Error::NonPositiveRadius(next.r()));
    }
    Ok(next)
}

/// Time grid, plant constants, diffusion and actuator limits shared by all
/// rollouts of one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulator {
    pub params: ModelParams,
    pub limits: ActuatorLimits,
    pub diffusion: DiffusionSpec,
    pub dt: f64,
    pub steps: usize,
}

impl Simulator {
    pub fn new(params: ModelParams, limits: ActuatorLimits, diffusion: DiffusionSpec, dt: f64, t_f: f64) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if !(t_f > 0.0) {
            return Err(Error::invalid(format!("t_f must be positive, got {t_f}")));
        }
        let steps = (t_f / dt).round() as usize;
        if steps == 0 || (steps as f64 * dt - t_f).abs() > 1e-9 * t_f.max(1.0) {
            return Err(Error::invalid(format!("t_f = {t_f} is not a multiple of dt = {dt}")));
        }
        Ok(Simulator {
            params,
            limits,
            diffusion,
            dt,
            steps,
        })
    }

    pub fn t_f(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn noise(&self, seed: u64) -> NoiseRealization {
        NoiseRealization::generate(seed, self.steps, self.dt)
    }

    /// Propagate `x0` under an arbitrary state-feedback policy. The policy
    /// returns the input actually applied at grid index `k`.
    pub fn simulate<F>(&self, x0: &SystemState, xi: &UncertainParams, noise: Option<&NoiseRealization>, mut policy: F) -> Trajectory
    where
        F: FnMut(usize, &SystemState) -> ControlInput,
    {
        let pl = Plant::new(&self.params, xi);
        let n = self.steps;
        let mut tr = Trajectory {
            dt: self.dt,
            times: (0..=n).map(|k| self.time(k)).collect(),
            states: Vec::with_capacity(n + 1),
            controls: Vec::with_capacity(n + 1),
            outputs: Vec::with_capacity(n + 1),
            invalid_from: None,
            diagnostics: vec![],
        };
        let mut x = *x0;
        x.enforce_taut();
        if !(x.r() > R_MIN) {
            tr.invalid_from = Some(0);
        }
        for k in 0..=n {
            tr.states.push(x);
            tr.outputs.push(output(&x));
            if tr.invalid_from.is_some() {
                tr.controls.push(ControlInput::zero());
                continue;
            }
            let u = policy(k, &x);
            tr.controls.push(u);
            if k == n {
                break;
            }
            let dw = noise.map(|nz| &nz.increments[k]);
            let next = SystemState(em_step_raw(&x.0, &u.0, &pl, &self.diffusion, self.dt, dw));
            if next.r() > R_MIN && next.is_finite() {
                x = next;
            } else {
                tr.invalid_from = Some(k + 1);
            }
        }
        tr
    }

    /// Noise-free rollout of the plan under the expected parameters.
    pub fn nominal_rollout(&self, plan: &ControlPlan, xi_bar: &UncertainParams, x0: &SystemState) -> Result<Trajectory> {
        plan.check_covers(self.t_f())?;
        let limits = self.limits;
        Ok(self.simulate(x0, xi_bar, None, |k, _| {
            ControlInput(limits.saturate(&plan.value_at_unchecked(self.time(k)).0))
        }))
    }

    /// Rollout under `mu = sat(u(t) + K (x_nom(t) - x(t)))`.
    #[allow(clippy::too_many_arguments)]
    pub fn closed_loop_rollout(
        &self,
        plan: &ControlPlan,
        nominal: &Trajectory,
        gain: &FeedbackGain,
        xi: &UncertainParams,
        x0: &SystemState,
        noise: Option<&NoiseRealization>,
    ) -> Result<Trajectory> {
        plan.check_covers(self.t_f())?;
        if nominal.len() != self.steps + 1 || (nominal.dt - self.dt).abs() > 1e-12 {
            return Err(Error::invalid("nominal trajectory is not on the simulator grid"));
        }
        if let Some(nz) = noise {
            if nz.increments.len() < self.steps {
                return Err(Error::invalid("noise realization shorter than the grid"));
            }
        }
        let limits = self.limits;
        Ok(self.simulate(x0, xi, noise, |k, x| {
            let u = plan.value_at_unchecked(self.time(k));
            feedback_law_at(&u, &nominal.states[k], x, gain, &limits)
        }))
    }
}
