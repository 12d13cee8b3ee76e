//! Augmented-Lagrangian solve of the sample-average problem.

use std::time::Instant;

use serde::Serialize;

use super::lbfgs::{minimize, LbfgsSettings};
use super::saa::{SaaProblem, SaaValues};
use super::OcpSpec;
use crate::control::ControlPlan;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub method: String,
    #[serde(skip)]
    pub plan: ControlPlan,
    pub objective: f64,
    pub cvar_value: f64,
    pub mean_h: f64,
    /// Outer (multiplier) iterations.
    pub iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub multipliers: [f64; 2],
    pub penalty: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl SolveReport {
    /// Equality on everything except wall time.
    pub fn same_result(&self, other: &SolveReport) -> bool {
        let mut a = self.clone();
        a.wall_time_s = other.wall_time_s;
        a.plan == other.plan && serde_json::to_string(&a).ok() == serde_json::to_string(other).ok()
    }
}

/// PHR term `lambda g + rho/2 g^2` on the active side, `-lambda^2 / (2 rho)` otherwise,
/// with its derivative in `g`.
fn phr(g: f64, lambda: f64, rho: f64) -> (f64, f64) {
    if g + lambda / rho > 0.0 {
        (lambda * g + 0.5 * rho * g * g, lambda + rho * g)
    } else {
        (-lambda * lambda / (2.0 * rho), 0.0)
    }
}

fn violation(v: &SaaValues, spec: &OcpSpec) -> f64 {
    v.cvar_value.max(0.0) + (v.mean_h - spec.delta_m).max(0.0)
}

fn feasible(v: &SaaValues, spec: &OcpSpec) -> bool {
    let tol = spec.solver.tol_c;
    v.cvar_value <= tol && v.mean_h <= spec.delta_m + tol
}

/// Solve with the problem's gain and sample set. `initial` defaults to the
/// hover-force plan.
pub fn solve_socp_fb(spec: &OcpSpec, initial: Option<&ControlPlan>) -> Result<SolveReport> {
    let prob = SaaProblem::from_spec(spec)?;
    solve_problem(&prob, initial)
}

struct Stage {
    plan: ControlPlan,
    values: SaaValues,
    outer: usize,
    inner: usize,
    evals: usize,
    converged: bool,
    lam: [f64; 2],
    rho: f64,
}

/// Solve on an already drawn sample set.
///
/// With continuation levels configured, the problem is first solved at each
/// larger risk level in turn, each warm-starting the next, which steers the
/// plan around the whole cloud of sampled obstacles before the tail
/// constraint takes over.
pub fn solve_problem(prob: &SaaProblem, initial: Option<&ControlPlan>) -> Result<SolveReport> {
    let start = Instant::now();
    let spec = &prob.spec;
    let mut plan = match initial {
        Some(p) => p.clone(),
        None => spec.initial_plan()?,
    };
    plan.validate()?;
    plan.check_covers(spec.t_f)?;
    let (mut inner, mut evals, mut outer) = (0, 0, 0);
    for &alpha in spec.solver.alpha_continuation.iter().filter(|&&a| a > spec.alpha) {
        let mut staged = spec.clone();
        staged.alpha = alpha;
        let sub = SaaProblem::new(&staged, prob.samples.clone())?;
        let st = augmented_lagrangian(&sub, plan)?;
        (inner, evals, outer) = (inner + st.inner, evals + st.evals, outer + st.outer);
        plan = st.plan;
    }
    let st = augmented_lagrangian(prob, plan)?;
    let v = st.values;
    Ok(SolveReport {
        method: spec.method_label().to_string(),
        plan: st.plan,
        objective: v.objective,
        cvar_value: v.cvar_value,
        mean_h: v.mean_h,
        iterations: outer + st.outer,
        inner_iterations: inner + st.inner,
        evaluations: evals + st.evals,
        converged: st.converged,
        multipliers: st.lam,
        penalty: st.rho,
        n_samples: prob.samples.len(),
        seed: spec.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn augmented_lagrangian(prob: &SaaProblem, mut plan: ControlPlan) -> Result<Stage> {
    let spec = &prob.spec;
    let scale = spec.params.u_max;
    let j0 = prob.smoothed(&plan)?.objective.max(1e-9);

    let st = &spec.solver;
    let (mut lam, mut rho) = ([0.0f64; 2], st.penalty_init);
    let mut prev_violation = f64::INFINITY;
    let (mut inner_total, mut evals, mut outer) = (0, 0, 0);
    let mut best: Option<(ControlPlan, SaaValues)> = None;
    let better = |cand: &SaaValues, cur: &SaaValues| match (feasible(cand, spec), feasible(cur, spec)) {
        (true, true) => cand.objective < cur.objective,
        (true, false) => true,
        (false, true) => false,
        (false, false) => violation(cand, spec) < violation(cur, spec),
    };

    let settings = LbfgsSettings {
        memory: st.lbfgs_memory,
        max_iter: st.max_inner,
        grad_tol: st.grad_tol,
        ..LbfgsSettings::default()
    };
    let mut z: Vec<f64> = plan.to_flat().iter().map(|v| v / scale).collect();
    let mut converged = false;
    while outer < st.max_outer {
        outer += 1;
        let (l, r) = (lam, rho);
        let mut work = plan.clone();
        let merit = |zz: &[f64]| -> Result<(f64, Vec<f64>)> {
            let flat: Vec<f64> = zz.iter().map(|v| v * scale).collect();
            work.set_flat(&flat);
            let mut value = 0.0;
            let (_, g) = prob.smoothed_gradient(&work, |s| {
                let (p1, d1) = phr(s.cvar, l[0], r);
                let (p2, d2) = phr(s.mean_h - spec.delta_m, l[1], r);
                value = s.objective / j0 + p1 + p2;
                [1.0 / j0, d1, d2]
            })?;
            Ok((value, g.into_iter().map(|v| v * scale).collect()))
        };
        let res = minimize(merit, z.clone(), &settings)?;
        inner_total += res.iterations;
        evals += res.evaluations;
        z = res.x;
        plan.set_flat(&z.iter().map(|v| v * scale).collect::<Vec<_>>());

        let exact = prob.evaluate(&plan)?;
        if best.as_ref().is_none_or(|(_, b)| better(&exact, b)) {
            best = Some((plan.clone(), exact.clone()));
        }
        if feasible(&exact, spec) {
            converged = true;
            break;
        }
        let s = prob.smoothed(&plan)?;
        let g = [s.cvar, s.mean_h - spec.delta_m];
        for i in 0..2 {
            lam[i] = (lam[i] + rho * g[i]).max(0.0);
        }
        let v = g.iter().map(|x| x.max(0.0)).sum::<f64>();
        if v > 0.25 * prev_violation {
            rho *= st.penalty_growth;
        }
        prev_violation = v;
    }

    let (plan, values) = best.ok_or_else(|| Error::invalid("solver ran no iterations"))?;
    Ok(Stage {
        plan,
        values,
        outer,
        inner: inner_total,
        evals,
        converged,
        lam,
        rho,
    })
}
