//! The (location x model x method) sweep.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{collision_flag, energy, final_position_error};
use super::scenario::Scenario;
use super::stats::{aggregate, welch_t_test, Aggregate, Direction, TTest};
use crate::baselines::{run_astar_pid_cbf, run_mppi, BaselineConfig, Episode};
use crate::control::{ActuatorLimits, ControlPlan, FeedbackGain};
use crate::error::{Error, Result};
use crate::model::{ModelParams, SystemState};
use crate::optimizer::{solve_problem, OcpSettings, OcpSpec, SaaProblem, SampleSet};
use crate::stochastic::{
    sample_xi, DiffusionSpec, DistributionKind, NoiseRealization, Simulator, Trajectory, UncertainParams,
    UncertaintySpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "RA-SAA+FB")]
    RaSaaFb,
    #[serde(rename = "RA-SAA")]
    RaSaa,
    #[serde(rename = "A*+PID+CBF")]
    AstarPidCbf,
    #[serde(rename = "MPPI")]
    Mppi,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::RaSaaFb, Method::RaSaa, Method::AstarPidCbf, Method::Mppi];

    pub fn label(self) -> &'static str {
        match self {
            Method::RaSaaFb => "RA-SAA+FB",
            Method::RaSaa => "RA-SAA",
            Method::AstarPidCbf => "A*+PID+CBF",
            Method::Mppi => "MPPI",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

/// One row of the result table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub i: usize,
    pub j: usize,
    pub epsilon: f64,
    pub rho_final: f64,
    pub rho_collision: u8,
    pub rho_energy: f64,
    pub valid: bool,
}

/// Everything shared by all cells of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSetup {
    pub params: ModelParams,
    pub diffusion: DiffusionSpec,
    pub ocp: OcpSettings,
    pub baselines: BaselineConfig,
    pub distribution: DistributionKind,
    pub tied_drag: bool,
    pub obstacle_pos_rel_err: f64,
    pub obstacle_size_rel_err: f64,
    pub methods: Vec<Method>,
    pub epsilons: Vec<f64>,
    pub n_model: usize,
    pub seed: u64,
    /// Keep the rollouts of this location for plotting.
    pub keep_location: Option<usize>,
}

impl BenchmarkSetup {
    pub fn new(methods: Vec<Method>, epsilons: Vec<f64>, n_model: usize, seed: u64) -> Self {
        BenchmarkSetup {
            params: ModelParams::default(),
            diffusion: DiffusionSpec::default(),
            ocp: OcpSettings::default(),
            baselines: BaselineConfig::default(),
            distribution: DistributionKind::Uniform,
            tied_drag: true,
            obstacle_pos_rel_err: 0.30,
            obstacle_size_rel_err: 0.10,
            methods,
            epsilons,
            n_model,
            seed,
            keep_location: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.ocp.validate(&self.params)?;
        self.baselines.validate()?;
        if self.methods.is_empty() || self.epsilons.is_empty() || self.n_model == 0 {
            return Err(Error::invalid("benchmark needs at least one method, epsilon and model"));
        }
        for &eps in &self.epsilons {
            self.belief(eps, &crate::stochastic::Obstacle::new(0.0, 1.0, 1.0)).validate()?;
        }
        Ok(())
    }

    fn belief(&self, epsilon: f64, observed: &crate::stochastic::Obstacle) -> UncertaintySpec {
        UncertaintySpec {
            epsilon,
            obstacle_pos_rel_err: self.obstacle_pos_rel_err,
            obstacle_size_rel_err: self.obstacle_size_rel_err,
            expected: UncertainParams::from_model(&self.params, vec![*observed]),
            distribution: self.distribution,
            tied_drag: self.tied_drag,
        }
    }
}

/// Outcome of one planner solve inside the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub method: String,
    pub i: usize,
    pub epsilon: f64,
    pub converged: bool,
    pub objective: f64,
    pub cvar_value: f64,
    pub mean_h: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// The solver errored and the hover plan was flown instead.
    pub failed: bool,
}

/// A rollout kept for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct KeptRollout {
    pub method: String,
    pub epsilon: f64,
    pub j: usize,
    pub traj: Trajectory,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchmarkOutput {
    pub records: Vec<MetricsRecord>,
    pub solves: Vec<SolveSummary>,
    pub kept: Vec<KeptRollout>,
}

/// Child seed from a base seed, a tag and indices.
pub fn derive_seed(base: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

struct Unit<'a> {
    setup: &'a BenchmarkSetup,
    scenario: &'a Scenario,
    epsilon: f64,
}

struct UnitOutput {
    records: Vec<MetricsRecord>,
    solves: Vec<SolveSummary>,
    kept: Vec<KeptRollout>,
}

impl Unit<'_> {
    fn x0(&self) -> SystemState {
        SystemState::hanging(self.scenario.y0.x, self.scenario.y0.d, &self.setup.params)
    }

    fn ocp(&self) -> OcpSpec {
        let s = self.setup;
        let mut spec = OcpSpec::new(s.params.clone(), s.belief(self.epsilon, &self.scenario.observed), self.x0(), self.scenario.y_d);
        spec.apply(&s.ocp);
        spec.t_f = self.scenario.t_f;
        spec.diffusion = s.diffusion.clone();
        spec.seed = derive_seed(s.seed, "saa", &[self.scenario.index as u64]);
        spec
    }

    /// FB and open-loop plans on one shared sample set.
    fn plans(&self) -> Result<Vec<(Method, ControlPlan, FeedbackGain, SolveSummary)>> {
        let fb = self.ocp();
        let samples = SampleSet::draw(&fb, fb.seed)?;
        let mut out = vec![];
        for m in [Method::RaSaaFb, Method::RaSaa] {
            if !self.setup.methods.contains(&m) {
                continue;
            }
            let mut spec = fb.clone();
            if m == Method::RaSaa {
                spec.gain = FeedbackGain::zero();
            }
            let solved = SaaProblem::new(&spec, samples.clone()).and_then(|p| solve_problem(&p, None));
            let summary = |failed, r: Option<&crate::optimizer::SolveReport>| SolveSummary {
                method: m.label().into(),
                i: self.scenario.index,
                epsilon: self.epsilon,
                converged: r.is_some_and(|r| r.converged),
                objective: r.map_or(f64::NAN, |r| r.objective),
                cvar_value: r.map_or(f64::NAN, |r| r.cvar_value),
                mean_h: r.map_or(f64::NAN, |r| r.mean_h),
                iterations: r.map_or(0, |r| r.iterations),
                evaluations: r.map_or(0, |r| r.evaluations),
                failed,
            };
            match solved {
                Ok(r) => out.push((m, r.plan.clone(), spec.gain, summary(false, Some(&r)))),
                Err(_) => out.push((m, spec.initial_plan()?, spec.gain, summary(true, None))),
            }
        }
        Ok(out)
    }

    fn run(&self) -> Result<UnitOutput> {
        let s = self.setup;
        let sc = self.scenario;
        let spec = self.ocp();
        let sim = Simulator::new(s.params.clone(), ActuatorLimits::plant(&s.params), s.diffusion.clone(), spec.dt, sc.t_f)?;
        let x0 = self.x0();
        let plans = self.plans()?;
        let expected = spec.uncertainty.expected.clone();
        let nominals: Vec<Trajectory> = plans
            .iter()
            .map(|(_, plan, _, _)| sim.nominal_rollout(plan, &expected, &x0))
            .collect::<Result<_>>()?;
        // the truth keeps the scenario's obstacle and redraws only the plant
        let truth_spec = UncertaintySpec {
            obstacle_pos_rel_err: 0.0,
            obstacle_size_rel_err: 0.0,
            expected: UncertainParams::from_model(&s.params, vec![sc.obstacle]),
            ..spec.uncertainty.clone()
        };
        let keep = s.keep_location == Some(sc.index);
        type Rows = Vec<(MetricsRecord, Option<KeptRollout>)>;
        let cells: Vec<Result<Rows>> = (0..s.n_model)
            .into_par_iter()
            .map(|j| {
                let ij = [sc.index as u64, j as u64];
                let truth = sample_xi(&truth_spec, derive_seed(s.seed, "truth", &ij))?;
                let noise = (!s.diffusion.is_zero()).then(|| NoiseRealization::generate(derive_seed(s.seed, "noise", &ij), sim.steps, sim.dt));
                let mut rows = Vec::with_capacity(s.methods.len());
                for &m in &s.methods {
                    let traj = match m {
                        Method::RaSaaFb | Method::RaSaa => {
                            let k = plans.iter().position(|p| p.0 == m).expect("plan solved for every planner method");
                            let (_, plan, gain, _) = &plans[k];
                            sim.closed_loop_rollout(plan, &nominals[k], gain, &truth, &x0, noise.as_ref())?
                        }
                        Method::AstarPidCbf | Method::Mppi => {
                            let ep = Episode {
                                sim: &sim,
                                truth: &truth,
                                noise: noise.as_ref(),
                                x0,
                                y_d: sc.y_d,
                                belief: &expected,
                            };
                            if m == Method::Mppi {
                                run_mppi(&ep, &s.baselines.mppi, &spec.r_weight, derive_seed(s.seed, "mppi", &ij))
                            } else {
                                run_astar_pid_cbf(&ep, &s.baselines)
                            }
                        }
                    };
                    let rec = MetricsRecord {
                        method: m.label().into(),
                        i: sc.index,
                        j,
                        epsilon: self.epsilon,
                        rho_final: final_position_error(&traj, &sc.y_d),
                        rho_collision: collision_flag(&traj, &[sc.obstacle]),
                        rho_energy: energy(&traj),
                        valid: traj.is_valid(),
                    };
                    let kept = keep.then(|| KeptRollout {
                        method: m.label().into(),
                        epsilon: self.epsilon,
                        j,
                        traj,
                    });
                    rows.push((rec, kept));
                }
                Ok(rows)
            })
            .collect();
        let mut out = UnitOutput {
            records: vec![],
            solves: plans.into_iter().map(|p| p.3).collect(),
            kept: vec![],
        };
        for rows in cells {
            for (rec, kept) in rows? {
                out.records.push(rec);
                out.kept.extend(kept);
            }
        }
        Ok(out)
    }
}

/// Run every method on every `(epsilon, location, model)` cell. Results are
/// ordered by epsilon, location, model and method regardless of scheduling;
/// `sink` receives them in that order, a batch of locations at a time.
pub fn run_benchmark<F>(setup: &BenchmarkSetup, scenarios: &[Scenario], mut sink: F) -> Result<BenchmarkOutput>
where
    F: FnMut(&[MetricsRecord]) -> Result<()>,
{
    setup.validate()?;
    if scenarios.is_empty() {
        return Err(Error::invalid("no scenarios"));
    }
    let units: Vec<Unit> = setup
        .epsilons
        .iter()
        .flat_map(|&epsilon| scenarios.iter().map(move |scenario| Unit { setup, scenario, epsilon }))
        .collect();
    let batch = rayon::current_num_threads().max(1);
    let mut out = BenchmarkOutput::default();
    for chunk in units.chunks(batch) {
        let done: Vec<Result<UnitOutput>> = chunk.par_iter().map(Unit::run).collect();
        for u in done {
            let u = u?;
            sink(&u.records)?;
            out.records.extend(u.records);
            out.solves.extend(u.solves);
            out.kept.extend(u.kept);
        }
    }
    Ok(out)
}

/// One metric compared between two methods (or two tables).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub epsilon: f64,
    pub metric: String,
    pub test: Option<TTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBlock {
    pub epsilon: f64,
    pub methods: Vec<Aggregate>,
    /// `reference < other` one-sided tests; significant ones are the starred bars.
    pub tests: Vec<Comparison>,
    pub solves_converged: Vec<(String, usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub reference: String,
    pub blocks: Vec<EpsilonBlock>,
}

fn metric_tests(a: &Aggregate, b: &Aggregate, a_name: &str, b_name: &str) -> Vec<Comparison> {
    let pairs = [
        ("final_error", &a.final_error, &b.final_error),
        ("collision", &a.collision, &b.collision),
        ("energy", &a.energy, &b.energy),
    ];
    pairs
        .into_iter()
        .map(|(metric, x, y)| Comparison {
            a: a_name.into(),
            b: b_name.into(),
            epsilon: a.epsilon,
            metric: metric.into(),
            test: welch_t_test(&x.per_location, &y.per_location, Direction::Less).ok(),
        })
        .collect()
}

/// Per-epsilon aggregates and the reference method's one-sided tests
/// against every other method.
pub fn summarize(records: &[MetricsRecord], solves: &[SolveSummary], reference: Method) -> Result<Summary> {
    let aggs = aggregate(records)?;
    let mut eps: Vec<f64> = aggs.iter().map(|a| a.epsilon).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let order = |name: &str| name.parse::<Method>().map_or(usize::MAX, |m| m as usize);
    let blocks = eps
        .into_iter()
        .map(|e| {
            let mut methods: Vec<Aggregate> = aggs.iter().filter(|a| a.epsilon == e).cloned().collect();
            methods.sort_by_key(|a| order(&a.method));
            let tests = match methods.iter().find(|a| a.method == reference.label()) {
                Some(r) => methods
                    .iter()
                    .filter(|a| a.method != r.method)
                    .flat_map(|o| metric_tests(r, o, &r.method, &o.method))
                    .collect(),
                None => vec![],
            };
            let mut solves_converged = vec![];
            for m in [Method::RaSaaFb, Method::RaSaa] {
                let of: Vec<&SolveSummary> = solves.iter().filter(|s| s.epsilon == e && s.method == m.label()).collect();
                if !of.is_empty() {
                    solves_converged.push((m.label().to_string(), of.iter().filter(|s| s.converged).count(), of.len()));
                }
            }
            EpsilonBlock {
                epsilon: e,
                methods,
                tests,
                solves_converged,
            }
        })
        .collect();
    Ok(Summary {
        reference: reference.label().into(),
        blocks,
    })
}

/// Tests `a < b` for every `(method, epsilon)` group present in both tables.
pub fn compare_tables(a: &[MetricsRecord], b: &[MetricsRecord]) -> Result<Vec<Comparison>> {
    let (aa, bb) = (aggregate(a)?, aggregate(b)?);
    let mut out = vec![];
    for x in &aa {
        if let Some(y) = bb.iter().find(|y| y.method == x.method && y.epsilon == x.epsilon) {
            out.extend(metric_tests(x, y, &format!("{} (a)", x.method), &format!("{} (b)", y.method)));
        }
    }
    Ok(out)
}

/// Write the result table as CSV.
pub fn write_records<W: std::io::Write>(records: &[MetricsRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush().map_err(|e| Error::io("<records csv>", e))?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(r: R) -> Result<Vec<MetricsRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = vec![];
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
