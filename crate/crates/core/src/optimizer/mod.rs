//! Risk-aware sample-average trajectory optimization with local feedback.
//!
//! The same solver covers the open-loop variant: pass a zero gain.

mod cost;
mod cvar;
pub mod lbfgs;
mod saa;
mod solve;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::control::{ActuatorLimits, ControlPlan, FeedbackGain, HoldMode};
use crate::error::{Error, Result};
use crate::model::{ControlInput, ModelParams, OutputY, SystemState};
use crate::stochastic::{DiffusionSpec, Simulator, UncertaintySpec};

pub use cost::{collision_margin, integrated_cost, running_cost, terminal_violation};
pub use cvar::{cvar, smoothed_cvar};
pub use saa::{SaaProblem, SaaValues, SampleSet, Smoothed, INVALID_MARGIN, INVALID_TERMINAL};
pub use solve::{solve_problem, solve_socp_fb, SolveReport};

/// Outer/inner iteration budget and tolerances of the augmented-Lagrangian solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Constraint tolerance on the exact CVaR and terminal values.
    pub tol_c: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub lbfgs_memory: usize,
    /// Inner stopping threshold on the largest gradient entry.
    pub grad_tol: f64,
    /// Risk levels solved first, largest to smallest, each warm-starting the
    /// next; levels at or below the problem's own are skipped.
    pub alpha_continuation: Vec<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_outer: 8,
            max_inner: 150,
            tol_c: 1e-3,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            lbfgs_memory: 10,
            grad_tol: 1e-6,
            alpha_continuation: vec![1.0, 0.3, 0.1],
        }
    }
}

/// The configurable part of an [`OcpSpec`]; scenario geometry, plant and
/// uncertainty come from elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpSettings {
    pub alpha: f64,
    pub delta_m: f64,
    pub t_f: f64,
    pub dt: f64,
    pub n_samples: usize,
    pub knot_spacing: f64,
    pub hold: HoldMode,
    pub tau_smooth: f64,
    pub gain: FeedbackGain,
    /// Full 4x4 input weight; `None` means `I / m^2`.
    pub r_weight: Option<[[f64; 4]; 4]>,
    pub solver: SolverSettings,
}

impl Default for OcpSettings {
    fn default() -> Self {
        OcpSettings {
            alpha: 0.02,
            delta_m: 0.3,
            t_f: 12.0,
            dt: 0.05,
            n_samples: 20,
            knot_spacing: 0.25,
            hold: HoldMode::ZeroOrder,
            tau_smooth: 0.05,
            gain: FeedbackGain::table2(),
            r_weight: None,
            solver: SolverSettings::default(),
        }
    }
}

impl OcpSettings {
    /// Range checks, run on a throwaway problem with these settings.
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let x0 = SystemState::hanging(0.0, 1.0, params);
        let mut spec = OcpSpec::new(params.clone(), UncertaintySpec::new(params, vec![], 0.0), x0, OutputY::new(0.0, 1.0, 0.0));
        spec.apply(self);
        spec.validate()?;
        if !(self.knot_spacing > 0.0) {
            return Err(Error::invalid("knot spacing must be positive"));
        }
        Ok(())
    }
}

/// Everything that defines one stochastic optimal control problem.
#[derive(Clone, Debug, PartialEq)]
pub struct OcpSpec {
    pub params: ModelParams,
    pub limits: ActuatorLimits,
    pub diffusion: DiffusionSpec,
    pub uncertainty: UncertaintySpec,
    pub gain: FeedbackGain,
    /// Input weight of the running cost.
    pub r_weight: Matrix4<f64>,
    pub alpha: f64,
    /// Bound on the sample mean of the squared terminal error (m^2).
    pub delta_m: f64,
    pub t_f: f64,
    pub dt: f64,
    pub n_samples: usize,
    pub knot_spacing: f64,
    pub hold: HoldMode,
    /// Temperature of the log-sum-exp and softplus surrogates (m).
    pub tau_smooth: f64,
    pub x0: SystemState,
    pub y_d: OutputY,
    /// Seed of the SAA sample set.
    pub seed: u64,
    pub solver: SolverSettings,
}

impl OcpSpec {
    /// Problem with the default weights, gains and grid for the given
    /// start state, target and uncertainty model.
    pub fn new(params: ModelParams, uncertainty: UncertaintySpec, x0: SystemState, y_d: OutputY) -> Self {
        let m = params.m;
        OcpSpec {
            limits: ActuatorLimits::plant(&params),
            params,
            diffusion: DiffusionSpec::default(),
            uncertainty,
            gain: FeedbackGain::table2(),
            r_weight: Matrix4::identity() / (m * m),
            alpha: 0.02,
            delta_m: 0.3,
            t_f: 12.0,
            dt: 0.05,
            n_samples: 20,
            knot_spacing: 0.25,
            hold: HoldMode::ZeroOrder,
            tau_smooth: 0.05,
            x0,
            y_d,
            seed: 0,
            solver: SolverSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.limits.validate()?;
        self.uncertainty.validate()?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.delta_m >= 0.0) {
            return Err(Error::invalid(format!("delta_M must be >= 0, got {}", self.delta_m)));
        }
        if self.n_samples < 1 {
            return Err(Error::invalid("N must be at least 1"));
        }
        if !(self.tau_smooth > 0.0) {
            return Err(Error::invalid("smoothing temperature must be positive"));
        }
        if !(self.r_weight.iter().all(|v| v.is_finite())) || self.r_weight.symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::invalid("R must be finite and positive semidefinite"));
        }
        if !(self.x0.r() > crate::model::R_MIN) {
            return Err(Error::NonPositiveRadius(self.x0.r()));
        }
        let s = &self.solver;
        let levels_ok = s.alpha_continuation.iter().all(|a| *a > 0.0 && *a <= 1.0);
        if s.max_outer == 0 || s.lbfgs_memory == 0 || !(s.tol_c >= 0.0) || !(s.penalty_init > 0.0) || !(s.penalty_growth > 1.0) || !levels_ok {
            return Err(Error::invalid("solver settings out of range"));
        }
        self.simulator().map(|_| ())
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.params.clone(), self.limits, self.diffusion.clone(), self.dt, self.t_f)
    }

    /// Constant `u = (0, 0, -m_bar g, 0)` on the problem's knot grid.
    pub fn initial_plan(&self) -> Result<ControlPlan> {
        ControlPlan::constant(ControlInput::hover(&self.params), self.knot_spacing, self.t_f, self.hold)
    }

    /// Copy the tunable settings into this spec.
    pub fn apply(&mut self, s: &OcpSettings) {
        self.alpha = s.alpha;
        self.delta_m = s.delta_m;
        self.t_f = s.t_f;
        self.dt = s.dt;
        self.n_samples = s.n_samples;
        self.knot_spacing = s.knot_spacing;
        self.hold = s.hold;
        self.tau_smooth = s.tau_smooth;
        self.gain = s.gain;
        if let Some(r) = s.r_weight {
            self.r_weight = Matrix4::from_fn(|i, j| r[i][j]);
        }
        self.solver = s.solver.clone();
    }

    pub fn method_label(&self) -> &'static str {
        if self.gain.is_zero() {
            "RA-SAA"
        } else {
            "RA-SAA+FB"
        }
    }
}
