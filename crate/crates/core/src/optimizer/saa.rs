//! Sample-average evaluation of a plan on a fixed sample set, plus the
//! smoothed surrogate and its adjoint gradient with respect to the knots.

use nalgebra::{Matrix4, Vector4};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cost::{integrated_cost, point_margin, terminal_violation, trapezoid_weight};
use super::cvar::{cvar, smoothed_cvar};
use super::{collision_margin, OcpSpec};
use crate::control::ControlPlan;
use crate::error::{Error, Result};
use crate::model::{output_jacobian, state_jacobian, Plant, StateVector};
use crate::stochastic::{expected_xi, sample_xi, NoiseRealization, Simulator, Trajectory, UncertainParams};

/// Margin recorded for a rollout that breached the radius floor (m).
pub const INVALID_MARGIN: f64 = 10.0;
/// Terminal violation recorded for such a rollout (m^2).
pub const INVALID_TERMINAL: f64 = 100.0;

/// Fixed draws `{xi_i, noise_i}` reused by every evaluation of one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub xis: Vec<UncertainParams>,
    /// `None` when the diffusion is zero.
    pub noises: Vec<Option<NoiseRealization>>,
}

impl SampleSet {
    pub fn draw(spec: &OcpSpec, seed: u64) -> Result<Self> {
        let sim = spec.simulator()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xis = Vec::with_capacity(spec.n_samples);
        let mut noises = Vec::with_capacity(spec.n_samples);
        for _ in 0..spec.n_samples {
            let (xs, ns) = (rng.next_u64(), rng.next_u64());
            xis.push(sample_xi(&spec.uncertainty, xs)?);
            noises.push((!sim.diffusion.is_zero()).then(|| sim.noise(ns)));
        }
        Ok(SampleSet { xis, noises })
    }

    pub fn len(&self) -> usize {
        self.xis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xis.is_empty()
    }
}

/// Exact sample-average values of one plan.
#[derive(Clone, Debug, PartialEq)]
pub struct SaaValues {
    pub objective: f64,
    pub cvar_value: f64,
    pub mean_h: f64,
    pub margins: Vec<f64>,
    pub terminal: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Smoothed surrogate values the inner solver works with.
#[derive(Clone, Debug, PartialEq)]
pub struct Smoothed {
    pub objective: f64,
    pub cvar: f64,
    pub mean_h: f64,
}

/// A problem bound to its sample set.
#[derive(Clone, Debug)]
pub struct SaaProblem {
    pub spec: OcpSpec,
    pub samples: SampleSet,
    sim: Simulator,
    xi_bar: UncertainParams,
    plant_bar: Plant,
    plants: Vec<Plant>,
}

struct Forward {
    nominal: Trajectory,
    rollouts: Vec<Trajectory>,
    smoothed: Smoothed,
    cvar_grad: Vec<f64>,
}

impl SaaProblem {
    pub fn new(spec: &OcpSpec, samples: SampleSet) -> Result<Self> {
        spec.validate()?;
        if samples.is_empty() || samples.noises.len() != samples.len() {
            return Err(Error::invalid("sample set is empty or inconsistent"));
        }
        let sim = spec.simulator()?;
        let xi_bar = expected_xi(&spec.uncertainty);
        let plants = samples.xis.iter().map(|xi| Plant::new(&spec.params, xi)).collect();
        Ok(SaaProblem {
            plant_bar: Plant::new(&spec.params, &xi_bar),
            spec: spec.clone(),
            samples,
            sim,
            xi_bar,
            plants,
        })
    }

    /// Draws the sample set from the problem's own seed.
    pub fn from_spec(spec: &OcpSpec) -> Result<Self> {
        SaaProblem::new(spec, SampleSet::draw(spec, spec.seed)?)
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn expected(&self) -> &UncertainParams {
        &self.xi_bar
    }

    pub fn nominal(&self, plan: &ControlPlan) -> Result<Trajectory> {
        self.sim.nominal_rollout(plan, &self.xi_bar, &self.spec.x0)
    }

    /// Nominal rollout and the N closed-loop rollouts, in sample order.
    pub fn rollouts(&self, plan: &ControlPlan) -> Result<(Trajectory, Vec<Trajectory>)> {
        let nominal = self.nominal(plan)?;
        let rollouts = (0..self.samples.len())
            .into_par_iter()
            .map(|i| {
                self.sim.closed_loop_rollout(
                    plan,
                    &nominal,
                    &self.spec.gain,
                    &self.samples.xis[i],
                    &self.spec.x0,
                    self.samples.noises[i].as_ref(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((nominal, rollouts))
    }

    /// Exact objective, CVaR of the collision margins and mean terminal violation.
    pub fn evaluate(&self, plan: &ControlPlan) -> Result<SaaValues> {
        let (_, rollouts) = self.rollouts(plan)?;
        let n = rollouts.len() as f64;
        let mut out = SaaValues {
            objective: 0.0,
            cvar_value: 0.0,
            mean_h: 0.0,
            margins: Vec::with_capacity(rollouts.len()),
            terminal: Vec::with_capacity(rollouts.len()),
            valid: Vec::with_capacity(rollouts.len()),
        };
        for (tr, xi) in rollouts.iter().zip(&self.samples.xis) {
            out.objective += integrated_cost(tr, &self.spec.r_weight) / n;
            let ok = tr.is_valid();
            out.valid.push(ok);
            out.margins.push(if ok { collision_margin(tr, xi) } else { INVALID_MARGIN });
            out.terminal.push(if ok { terminal_violation(tr, &self.spec.y_d) } else { INVALID_TERMINAL });
        }
        out.mean_h = out.terminal.iter().sum::<f64>() / n;
        out.cvar_value = cvar(&out.margins, self.spec.alpha)?;
        Ok(out)
    }

    fn forward(&self, plan: &ControlPlan) -> Result<Forward> {
        let (nominal, rollouts) = self.rollouts(plan)?;
        let n = rollouts.len() as f64;
        let tau = self.spec.tau_smooth;
        let mut objective = 0.0;
        let mut margins = Vec::with_capacity(rollouts.len());
        let mut terminal = Vec::with_capacity(rollouts.len());
        for (tr, xi) in rollouts.iter().zip(&self.samples.xis) {
            objective += integrated_cost(tr, &self.spec.r_weight) / n;
            if tr.is_valid() {
                margins.push(soft_margin(tr, xi, tau));
                terminal.push(terminal_violation(tr, &self.spec.y_d));
            } else {
                margins.push(INVALID_MARGIN);
                terminal.push(INVALID_TERMINAL);
            }
        }
        let (c, cvar_grad) = smoothed_cvar(&margins, self.spec.alpha, tau);
        Ok(Forward {
            smoothed: Smoothed {
                objective,
                cvar: c,
                mean_h: terminal.iter().sum::<f64>() / n,
            },
            nominal,
            rollouts,
            cvar_grad,
        })
    }

    pub fn smoothed(&self, plan: &ControlPlan) -> Result<Smoothed> {
        Ok(self.forward(plan)?.smoothed)
    }

    /// Smoothed values and the knot gradient of
    /// `w0 * objective + w1 * cvar + w2 * mean_h`, where the weights are
    /// chosen by `merit` after seeing the values. The gradient is laid out
    /// like [`ControlPlan::to_flat`].
    pub fn smoothed_gradient<F>(&self, plan: &ControlPlan, merit: F) -> Result<(Smoothed, Vec<f64>)>
    where
        F: FnOnce(&Smoothed) -> [f64; 3],
    {
        let fw = self.forward(plan)?;
        let w = merit(&fw.smoothed);
        let steps = self.sim.steps;
        let nf = fw.rollouts.len() as f64;

        let per_sample: Vec<(Vec<Vector4<f64>>, Vec<StateVector>)> = (0..fw.rollouts.len())
            .into_par_iter()
            .map(|i| {
                let tr = &fw.rollouts[i];
                if !tr.is_valid() {
                    return (vec![], vec![]);
                }
                let weights = SampleWeights {
                    cost: w[0] / nf,
                    margin: w[1] * fw.cvar_grad[i],
                    terminal: w[2] / nf,
                };
                // a sample that reproduces the nominal keeps doing so under any
                // plan change, so its correction term is identically zero
                let tracks = tr.states != fw.nominal.states;
                self.sample_adjoint(plan, &fw.nominal, tr, &self.samples.xis[i], &self.plants[i], &weights, tracks)
            })
            .collect();

        let mut gu = vec![Vector4::zeros(); steps + 1];
        let mut gxn = vec![StateVector::zeros(); steps + 1];
        for (su, sx) in &per_sample {
            for k in 0..su.len() {
                gu[k] += su[k];
                gxn[k] += sx[k];
            }
        }
        self.nominal_adjoint(plan, &fw.nominal, gxn, &mut gu);

        let mut grad = vec![0.0; plan.values.len() * 4];
        for (k, g) in gu.iter().enumerate() {
            for (j, wt) in plan.weights(self.sim.time(k)) {
                if wt != 0.0 {
                    for c in 0..4 {
                        grad[4 * j + c] += wt * g[c];
                    }
                }
            }
        }
        Ok((fw.smoothed, grad))
    }

    /// Backward sweep through one closed-loop rollout. Returns the gradient
    /// with respect to the feedforward at each grid point and with respect to
    /// the nominal states it tracked.
    #[allow(clippy::too_many_arguments)]
    fn sample_adjoint(
        &self,
        plan: &ControlPlan,
        nominal: &Trajectory,
        tr: &Trajectory,
        xi: &UncertainParams,
        plant: &Plant,
        w: &SampleWeights,
        tracks: bool,
    ) -> (Vec<Vector4<f64>>, Vec<StateVector>) {
        let n = self.sim.steps;
        let dt = self.sim.dt;
        let spec = &self.spec;
        let r_sym = spec.r_weight + spec.r_weight.transpose();
        let (kp_t, kd_t) = (spec.gain.kp.transpose(), spec.gain.kd.transpose());
        let softmax = if w.margin != 0.0 {
            soft_margin_weights(tr, xi, spec.tau_smooth)
        } else {
            vec![]
        };
        let n_obs = xi.obstacles.len();

        let mut gu = vec![Vector4::zeros(); n + 1];
        let mut gxn = vec![StateVector::zeros(); n + 1];
        let mut lam = StateVector::zeros();
        for k in (0..=n).rev() {
            let x = &tr.states[k];
            let y = &tr.outputs[k];
            let mut direct = StateVector::zeros();
            let mut gy = nalgebra::Vector3::zeros();
            if !softmax.is_empty() {
                for (o, ob) in xi.obstacles.iter().enumerate() {
                    let p = softmax[k * n_obs + o];
                    if p == 0.0 {
                        continue;
                    }
                    let (dx, dd) = (y.x - ob.x, y.d - ob.d);
                    let dist = dx.hypot(dd).max(1e-12);
                    gy[0] -= w.margin * p * dx / dist;
                    gy[1] -= w.margin * p * dd / dist;
                }
            }
            if k == n && w.terminal != 0.0 {
                gy += (y.as_vector() - spec.y_d.as_vector()) * (2.0 * w.terminal);
            }
            if gy != nalgebra::Vector3::zeros() {
                direct += output_jacobian(x).transpose() * gy;
            }

            let lam_t = if k < n { retaut_transpose(&lam) } else { StateVector::zeros() };
            let mut gmu = r_sym * tr.controls[k].0 * (w.cost * trapezoid_weight(k, n, dt));
            if k < n {
                for c in 0..4 {
                    gmu[c] += dt * plant.inv_lag[c] * lam_t[8 + c];
                }
            }
            let v = plan.value_at_unchecked(self.sim.time(k)).0 + spec.gain.correction(&nominal.states[k], x);
            let gv = spec.limits.saturate_slope(&v).component_mul(&gmu);
            gu[k] = gv;
            let kt = if tracks { stack_gain(&kp_t, &kd_t, &gv) } else { StateVector::zeros() };
            gxn[k] = kt;

            let mut next = direct - kt;
            if k < n {
                next += lam_t + state_jacobian(&x.0, plant).transpose() * lam_t * dt;
            }
            lam = next;
        }
        (gu, gxn)
    }

    /// Backward sweep through the nominal rollout, accumulating into `gu`.
    fn nominal_adjoint(&self, plan: &ControlPlan, nominal: &Trajectory, mut gxn: Vec<StateVector>, gu: &mut [Vector4<f64>]) {
        let n = self.sim.steps;
        let dt = self.sim.dt;
        // frozen states after a floor breach are copies of the last valid one
        let last = match nominal.invalid_from {
            Some(0) => return,
            Some(v) => {
                let tail: StateVector = gxn[v..].iter().sum();
                gxn[v - 1] += tail;
                v - 1
            }
            None => n,
        };
        let il = self.plant_bar.inv_lag;
        let mut lam = StateVector::zeros();
        for k in (0..=last).rev() {
            let mut next = gxn[k];
            if k < last {
                let lam_t = retaut_transpose(&lam);
                let u = plan.value_at_unchecked(self.sim.time(k)).0;
                let slope = self.spec.limits.saturate_slope(&u);
                for c in 0..4 {
                    gu[k][c] += slope[c] * dt * il[c] * lam_t[8 + c];
                }
                next += lam_t + state_jacobian(&nominal.states[k].0, &self.plant_bar).transpose() * lam_t * dt;
            }
            lam = next;
        }
    }
}

struct SampleWeights {
    cost: f64,
    margin: f64,
    terminal: f64,
}

/// Transpose of the projection that copies `r` into `l` and `r_dot` into `l_dot`.
#[inline]
fn retaut_transpose(lam: &StateVector) -> StateVector {
    let mut t = *lam;
    t[1] += t[2];
    t[2] = 0.0;
    t[5] += t[6];
    t[6] = 0.0;
    t
}

/// `(K_P^T g, K_D^T g, 0)`.
#[inline]
fn stack_gain(kp_t: &Matrix4<f64>, kd_t: &Matrix4<f64>, g: &Vector4<f64>) -> StateVector {
    let a = kp_t * g;
    let b = kd_t * g;
    StateVector::from_fn(|i, _| match i {
        0..=3 => a[i],
        4..=7 => b[i - 4],
        _ => 0.0,
    })
}

/// `tau * log sum exp((a_o - dist_{k,o}) / tau)` over grid points and obstacles.
fn soft_margin(tr: &Trajectory, xi: &UncertainParams, tau: f64) -> f64 {
    if xi.obstacles.is_empty() {
        return f64::NEG_INFINITY;
    }
    let top = tr.outputs.iter().map(|y| point_margin(y, xi)).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = tr
        .outputs
        .iter()
        .flat_map(|y| xi.obstacles.iter().map(move |o| ((-o.clearance(y.x, y.d) - top) / tau).exp()))
        .sum();
    top + tau * sum.ln()
}

/// Softmax weights behind [`soft_margin`], indexed `k * n_obstacles + o`.
fn soft_margin_weights(tr: &Trajectory, xi: &UncertainParams, tau: f64) -> Vec<f64> {
    if xi.obstacles.is_empty() {
        return vec![];
    }
    let top = tr.outputs.iter().map(|y| point_margin(y, xi)).fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = tr
        .outputs
        .iter()
        .flat_map(|y| xi.obstacles.iter().map(move |o| ((-o.clearance(y.x, y.d) - top) / tau).exp()))
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::FeedbackGain;
    use crate::model::{ControlInput, ModelParams, OutputY, SystemState};
    use crate::stochastic::{DiffusionSpec, Obstacle, UncertaintySpec};

    fn toy(eps: f64, gain: FeedbackGain) -> OcpSpec {
        let p = ModelParams::default();
        let unc = UncertaintySpec::new(&p, vec![Obstacle::new(0.3, 2.6, 0.4)], eps);
        let mut spec = OcpSpec::new(p.clone(), unc, SystemState::hanging(0.0, 2.0, &p), OutputY::new(0.0, 2.5, 0.0));
        spec.t_f = 1.0;
        spec.knot_spacing = 0.5;
        spec.n_samples = 3;
        spec.alpha = 0.4;
        spec.gain = gain;
        spec.seed = 11;
        spec
    }

    fn plan_for(spec: &OcpSpec) -> ControlPlan {
        let mut plan = spec.initial_plan().unwrap();
        assert_eq!(plan.values.len(), 2);
        plan.values[0] = ControlInput::new(60.0, 150.0, -700.0, 30.0);
        plan.values[1] = ControlInput::new(-40.0, 250.0, -820.0, -20.0);
        plan
    }

    fn check_gradient(spec: &OcpSpec) {
        let prob = SaaProblem::from_spec(spec).unwrap();
        let plan = plan_for(spec);
        let w = [0.7, 3.0, 1.3];
        let merit = |s: &Smoothed| w[0] * s.objective + w[1] * s.cvar + w[2] * s.mean_h;
        let (_, g) = prob.smoothed_gradient(&plan, |_| w).unwrap();
        let flat = plan.to_flat();
        let h = 1e-5;
        let fd: Vec<f64> = (0..flat.len())
            .map(|i| {
                let mut p = plan.clone();
                let mut m = plan.clone();
                let mut a = flat.clone();
                a[i] += h;
                p.set_flat(&a);
                a[i] -= 2.0 * h;
                m.set_flat(&a);
                (merit(&prob.smoothed(&p).unwrap()) - merit(&prob.smoothed(&m).unwrap())) / (2.0 * h)
            })
            .collect();
        let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(scale > 0.0);
        for i in 0..fd.len() {
            let rel = (g[i] - fd[i]).abs() / scale;
            assert!(rel <= 1e-4, "entry {i}: adjoint {} vs differences {} (rel {rel:e})", g[i], fd[i]);
        }
    }

    #[test]
    fn gradient_matches_central_differences_with_feedback() {
        check_gradient(&toy(0.3, FeedbackGain::table2()));
    }

    #[test]
    fn gradient_matches_central_differences_open_loop() {
        check_gradient(&toy(0.3, FeedbackGain::zero()));
    }

    #[test]
    fn single_deterministic_sample_collapses() {
        let mut spec = toy(0.0, FeedbackGain::zero());
        spec.n_samples = 1;
        spec.diffusion = DiffusionSpec::zero();
        spec.uncertainty.obstacle_pos_rel_err = 0.0;
        spec.uncertainty.obstacle_size_rel_err = 0.0;
        let prob = SaaProblem::from_spec(&spec).unwrap();
        let plan = plan_for(&spec);
        let v = prob.evaluate(&plan).unwrap();
        let nom = prob.nominal(&plan).unwrap();
        assert_eq!(v.objective, integrated_cost(&nom, &spec.r_weight));
        assert_eq!(v.cvar_value, collision_margin(&nom, prob.expected()));
        assert_eq!(v.mean_h, terminal_violation(&nom, &spec.y_d));
    }

    #[test]
    fn hover_at_target_is_feasible() {
        let p = ModelParams::default();
        let unc = UncertaintySpec::new(&p, vec![Obstacle::new(3.0, 5.0, 0.5)], 0.0);
        let mut spec = OcpSpec::new(p.clone(), unc, SystemState::hanging(0.0, 2.0, &p), OutputY::new(0.0, 2.0, 0.0));
        spec.diffusion = DiffusionSpec::zero();
        spec.t_f = 2.0;
        let prob = SaaProblem::from_spec(&spec).unwrap();
        let v = prob.evaluate(&spec.initial_plan().unwrap()).unwrap();
        assert!(v.mean_h.abs() < 1e-20);
        assert!(v.cvar_value < 0.0);
    }

    #[test]
    fn objective_linear_in_r() {
        let spec = toy(0.3, FeedbackGain::table2());
        let mut doubled = spec.clone();
        doubled.r_weight *= 2.0;
        let plan = plan_for(&spec);
        let a = SaaProblem::from_spec(&spec).unwrap().evaluate(&plan).unwrap();
        let b = SaaProblem::from_spec(&doubled).unwrap().evaluate(&plan).unwrap();
        assert!((b.objective - 2.0 * a.objective).abs() <= 1e-12 * a.objective);
        assert_eq!((a.cvar_value, a.mean_h), (b.cvar_value, b.mean_h));
    }

    #[test]
    fn soft_margin_bounds_the_exact_margin() {
        let spec = toy(0.3, FeedbackGain::table2());
        let prob = SaaProblem::from_spec(&spec).unwrap();
        let (_, rolls) = prob.rollouts(&plan_for(&spec)).unwrap();
        for (tr, xi) in rolls.iter().zip(&prob.samples.xis) {
            let exact = collision_margin(tr, xi);
            let soft = soft_margin(tr, xi, 0.05);
            assert!(soft >= exact && soft <= exact + 0.05 * ((tr.len() * xi.obstacles.len()) as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn sample_set_is_reproducible() {
        let spec = toy(0.5, FeedbackGain::table2());
        assert_eq!(SampleSet::draw(&spec, 3).unwrap(), SampleSet::draw(&spec, 3).unwrap());
        assert_ne!(SampleSet::draw(&spec, 3).unwrap(), SampleSet::draw(&spec, 4).unwrap());
    }
}
