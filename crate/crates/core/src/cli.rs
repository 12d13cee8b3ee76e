//! Run configuration, the four commands behind the `tether` binary, and
//! their artifacts.
//!
//! Every command validates the whole configuration before computing,
//! writes into one output directory and leaves a `manifest.json` there.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::BaselineConfig;
use crate::control::ControlPlan;
use crate::error::{Error, Result};
use crate::evaluation::{
    compare_tables, derive_seed, generate_scenarios, read_records, run_benchmark, summarize, BenchmarkSetup, Comparison,
    Method, MetricsRecord, ScenarioRules, Summary,
};
use crate::model::{ModelParams, OutputY, SystemState};
use crate::optimizer::{solve_socp_fb, OcpSettings, OcpSpec, SaaProblem, SolveReport};
use crate::stochastic::{sample_xi, DiffusionSpec, DistributionKind, Obstacle, Trajectory, UncertaintySpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_UNCONVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => EXIT_IO,
        Error::Json(j) if j.is_io() => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyConfig {
    pub epsilon: f64,
    pub obstacle_pos_rel_err: f64,
    pub obstacle_size_rel_err: f64,
    pub distribution: DistributionKind,
    pub tied_drag: bool,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            epsilon: 0.2,
            obstacle_pos_rel_err: 0.30,
            obstacle_size_rel_err: 0.10,
            distribution: DistributionKind::Uniform,
            tied_drag: true,
        }
    }
}

/// Single scenario for `simulate` and `plan`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// UUV start `(x, d)`, hanging at rest under the USV.
    pub start: [f64; 2],
    pub target: OutputY,
    /// Obstacles as observed by the planner.
    pub obstacles: Vec<Obstacle>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            start: [0.0, 1.5],
            target: OutputY::new(0.0, 5.5, 0.0),
            obstacles: vec![Obstacle::new(0.0, 3.5, 0.8)],
        }
    }
}

/// Monte-Carlo sweep layout. Scenario geometry follows [`ScenarioRules`];
/// its horizon and observation errors come from the `ocp` and
/// `uncertainty` sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub n_location: usize,
    pub n_model: usize,
    pub epsilons: Vec<f64>,
    pub methods: Vec<Method>,
    /// Method whose one-sided tests against the others are reported.
    pub reference: Method,
    pub x_range: [f64; 2],
    pub d_range: [f64; 2],
    pub obstacle_x: [f64; 2],
    pub obstacle_d: [f64; 2],
    pub obstacle_a: [f64; 2],
    pub clearance: f64,
    pub min_depth: f64,
    pub max_rejections: usize,
    /// Location whose rollouts go into the trajectory plot data.
    pub plot_location: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let r = ScenarioRules::default();
        BenchmarkConfig {
            n_location: 10,
            n_model: 5,
            epsilons: vec![0.0, 0.2, 0.5],
            methods: Method::ALL.to_vec(),
            reference: Method::RaSaaFb,
            x_range: r.x_range,
            d_range: r.d_range,
            obstacle_x: r.obstacle_x,
            obstacle_d: r.obstacle_d,
            obstacle_a: r.obstacle_a,
            clearance: r.clearance,
            min_depth: r.min_depth,
            max_rejections: r.max_rejections,
            plot_location: 0,
        }
    }
}

/// The whole configuration file, one section per module.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelParams,
    pub uncertainty: UncertaintyConfig,
    pub diffusion: DiffusionSpec,
    pub ocp: OcpSettings,
    pub baselines: BaselineConfig,
    pub scenario: ScenarioConfig,
    pub benchmark: BenchmarkConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Check every section; nothing runs before this passes.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.ocp.validate(&self.model)?;
        self.baselines.validate()?;
        self.uncertainty_spec(self.uncertainty.epsilon, self.scenario.obstacles.clone()).validate()?;
        self.ocp_spec()?.validate()?;
        self.benchmark_setup().validate()?;
        self.scenario_rules().validate()?;
        let b = &self.benchmark;
        if b.n_location < 1 || b.n_model < 1 {
            return Err(Error::invalid("benchmark needs N_location >= 1 and N_model >= 1"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }

    fn uncertainty_spec(&self, epsilon: f64, obstacles: Vec<Obstacle>) -> UncertaintySpec {
        let u = &self.uncertainty;
        UncertaintySpec {
            epsilon,
            obstacle_pos_rel_err: u.obstacle_pos_rel_err,
            obstacle_size_rel_err: u.obstacle_size_rel_err,
            distribution: u.distribution,
            tied_drag: u.tied_drag,
            ..UncertaintySpec::new(&self.model, obstacles, epsilon)
        }
    }

    fn start_state(&self) -> SystemState {
        let [x, d] = self.scenario.start;
        SystemState::hanging(x, d, &self.model)
    }

    /// The single-scenario problem of `plan`.
    pub fn ocp_spec(&self) -> Result<OcpSpec> {
        let unc = self.uncertainty_spec(self.uncertainty.epsilon, self.scenario.obstacles.clone());
        let mut spec = OcpSpec::new(self.model.clone(), unc, self.start_state(), self.scenario.target);
        spec.apply(&self.ocp);
        spec.diffusion = self.diffusion.clone();
        spec.seed = derive_seed(self.seed, "saa", &[0]);
        Ok(spec)
    }

    pub fn scenario_rules(&self) -> ScenarioRules {
        let b = &self.benchmark;
        ScenarioRules {
            x_range: b.x_range,
            d_range: b.d_range,
            obstacle_x: b.obstacle_x,
            obstacle_d: b.obstacle_d,
            obstacle_a: b.obstacle_a,
            clearance: b.clearance,
            min_depth: b.min_depth,
            obstacle_pos_rel_err: self.uncertainty.obstacle_pos_rel_err,
            obstacle_size_rel_err: self.uncertainty.obstacle_size_rel_err,
            t_f: self.ocp.t_f,
            max_rejections: b.max_rejections,
        }
    }

    pub fn benchmark_setup(&self) -> BenchmarkSetup {
        let b = &self.benchmark;
        let mut s = BenchmarkSetup::new(b.methods.clone(), b.epsilons.clone(), b.n_model, self.seed);
        s.params = self.model.clone();
        s.diffusion = self.diffusion.clone();
        s.ocp = self.ocp.clone();
        s.baselines = self.baselines.clone();
        s.distribution = self.uncertainty.distribution;
        s.tied_drag = self.uncertainty.tied_drag;
        s.obstacle_pos_rel_err = self.uncertainty.obstacle_pos_rel_err;
        s.obstacle_size_rel_err = self.uncertainty.obstacle_size_rel_err;
        s
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reproduction record written next to every artifact set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Derived seeds by role.
    pub seeds: BTreeMap<String, u64>,
    /// Input files, by role, with their SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

/// Where and how a command writes.
#[derive(Clone, Debug)]
pub struct Output {
    pub dir: PathBuf,
    pub emit_plot_data: bool,
}

impl Output {
    pub fn new(dir: impl Into<PathBuf>, emit_plot_data: bool) -> Self {
        Output {
            dir: dir.into(),
            emit_plot_data,
        }
    }

    fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        File::create(&p).map(BufWriter::new).map_err(|e| Error::io(p, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&p, text).map_err(|e| Error::io(p, e))
    }
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn manifest(command: &str, cfg: &RunConfig, seeds: &[(&str, u64)], inputs: BTreeMap<String, String>, outputs: &[&str]) -> Manifest {
    Manifest {
        command: command.into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        inputs,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    }
}

fn finish(out: &Output, cfg: &RunConfig, m: &Manifest) -> Result<()> {
    out.write_json("config.json", cfg)?;
    out.write_json("manifest.json", m)
}

/// One closed-loop rollout of a saved plan against a plant drawn from the
/// configured uncertainty. Writes `trajectory.csv`.
pub fn cmd_simulate(cfg: &RunConfig, plan_path: &Path, out: &Output) -> Result<Trajectory> {
    cfg.validate()?;
    if !plan_path.is_file() {
        return Err(Error::Config(format!("plan file {} does not exist", plan_path.display())));
    }
    let plan = ControlPlan::load(plan_path)?;
    let spec = cfg.ocp_spec()?;
    plan.check_covers(spec.t_f)?;
    let sim = spec.simulator()?;
    let x0 = spec.x0;
    let truth_seed = derive_seed(cfg.seed, "truth", &[0]);
    let noise_seed = derive_seed(cfg.seed, "noise", &[0]);
    let truth = sample_xi(&spec.uncertainty, truth_seed)?;
    let noise = (!spec.diffusion.is_zero()).then(|| sim.noise(noise_seed));
    let nominal = sim.nominal_rollout(&plan, &spec.uncertainty.expected, &x0)?;
    let traj = sim.closed_loop_rollout(&plan, &nominal, &spec.gain, &truth, &x0, noise.as_ref())?;

    out.prepare()?;
    traj.write_csv(out.create("trajectory.csv")?)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("plan".into(), file_hash(plan_path)?);
    inputs.insert("plan_sidecar".into(), file_hash(&ControlPlan::sidecar_path(plan_path))?);
    let m = manifest(
        "simulate",
        cfg,
        &[("truth", truth_seed), ("noise", noise_seed)],
        inputs,
        &["trajectory.csv"],
    );
    finish(out, cfg, &m)?;
    Ok(traj)
}

fn write_rollouts(w: impl Write, rows: &[(String, &Trajectory)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["series", "t", "x", "d", "X", "valid"])?;
    for (name, tr) in rows {
        for k in 0..tr.len() {
            let y = tr.outputs[k];
            let valid = if tr.row_valid(k) { "1" } else { "0" };
            wr.write_record([name.as_str(), &tr.times[k].to_string(), &y.x.to_string(), &y.d.to_string(), &y.usv_x.to_string(), valid])?;
        }
    }
    wr.flush().map_err(|e| Error::io("<rollouts csv>", e))
}

fn write_obstacles(w: impl Write, obs: &[(String, Obstacle)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["kind", "x", "d", "a"])?;
    for (kind, o) in obs {
        wr.write_record([kind.as_str(), &o.x.to_string(), &o.d.to_string(), &o.a.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<obstacles csv>", e))
}

/// Solve the configured scenario. Writes `plan.csv`, its sidecar and
/// `report.json`; the returned report says whether the solve converged.
pub fn cmd_plan(cfg: &RunConfig, out: &Output) -> Result<SolveReport> {
    cfg.validate()?;
    let spec = cfg.ocp_spec()?;
    let report = solve_socp_fb(&spec, None)?;

    out.prepare()?;
    report.plan.save(&out.path("plan.csv"))?;
    out.write_json("report.json", &report)?;
    let mut outputs = vec!["plan.csv", "plan.json", "report.json"];
    if out.emit_plot_data {
        let prob = SaaProblem::from_spec(&spec)?;
        let (nominal, samples) = prob.rollouts(&report.plan)?;
        let mut rows = vec![("nominal".to_string(), &nominal)];
        rows.extend(samples.iter().enumerate().map(|(i, t)| (format!("sample_{i}"), t)));
        write_rollouts(out.create("fig4_trajectories.csv")?, &rows)?;
        let mut obs: Vec<(String, Obstacle)> = spec.uncertainty.expected.obstacles.iter().map(|o| ("observed".to_string(), *o)).collect();
        for (i, s) in prob.samples.xis.iter().enumerate() {
            obs.extend(s.obstacles.iter().map(|o| (format!("sample_{i}"), *o)));
        }
        write_obstacles(out.create("fig4_obstacles.csv")?, &obs)?;
        outputs.extend(["fig4_trajectories.csv", "fig4_obstacles.csv"]);
    }
    let m = manifest("plan", cfg, &[("saa", spec.seed)], BTreeMap::new(), &outputs);
    finish(out, cfg, &m)?;
    Ok(report)
}

/// Everything `benchmark` produced.
#[derive(Clone, Debug)]
pub struct BenchmarkRun {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
}

fn write_fig5(out: &Output, summary: &Summary) -> Result<Vec<String>> {
    let mut names = vec![];
    for metric in ["final_error", "collision", "energy"] {
        let name = format!("fig5_{metric}.csv");
        let mut wr = csv::Writer::from_writer(out.create(&name)?);
        wr.write_record(["epsilon", "method", "mean", "std", "significant"])?;
        for b in &summary.blocks {
            for a in &b.methods {
                let stat = match metric {
                    "final_error" => &a.final_error,
                    "collision" => &a.collision,
                    _ => &a.energy,
                };
                // a bar is starred when the reference beats this method on it
                let star = b
                    .tests
                    .iter()
                    .any(|c| c.b == a.method && c.metric == metric && c.test.as_ref().is_some_and(|t| t.significant));
                wr.write_record([b.epsilon.to_string(), a.method.clone(), stat.mean.to_string(), stat.std.to_string(), (star as u8).to_string()])?;
            }
        }
        wr.flush().map_err(|e| Error::io(out.path(&name), e))?;
        names.push(name);
    }
    Ok(names)
}

/// Full Monte-Carlo sweep. Rows are appended to `results.csv` and flushed
/// as each location finishes, so an interrupted run keeps what it had.
pub fn cmd_benchmark(cfg: &RunConfig, out: &Output) -> Result<BenchmarkRun> {
    cfg.validate()?;
    let scenario_seed = derive_seed(cfg.seed, "scenarios", &[]);
    let scenarios = generate_scenarios(cfg.benchmark.n_location, scenario_seed, &cfg.scenario_rules())?;
    let mut setup = cfg.benchmark_setup();
    if out.emit_plot_data {
        setup.keep_location = Some(cfg.benchmark.plot_location);
    }

    out.prepare()?;
    let results_path = out.path("results.csv");
    let mut wr = csv::Writer::from_writer(out.create("results.csv")?);
    let run = run_benchmark(&setup, &scenarios, |rows| {
        for r in rows {
            wr.serialize(r)?;
        }
        wr.flush().map_err(|e| Error::io(&results_path, e))
    })?;
    drop(wr);
    let summary = summarize(&run.records, &run.solves, cfg.benchmark.reference)?;
    out.write_json("summary.json", &summary)?;
    out.write_json("solves.json", &run.solves)?;
    out.write_json("scenarios.json", &scenarios)?;
    let mut outputs: Vec<String> = ["results.csv", "summary.json", "solves.json", "scenarios.json"].map(String::from).to_vec();
    if out.emit_plot_data {
        outputs.extend(write_fig5(out, &summary)?);
        let rows: Vec<(String, &Trajectory)> = run
            .kept
            .iter()
            .map(|k| (format!("{}|eps={}|j={}", k.method, k.epsilon, k.j), &k.traj))
            .collect();
        write_rollouts(out.create("fig4_trajectories.csv")?, &rows)?;
        let mut obs = vec![];
        if let Some(sc) = scenarios.iter().find(|s| s.index == cfg.benchmark.plot_location) {
            obs.push(("truth".to_string(), sc.obstacle));
            obs.push(("observed".to_string(), sc.observed));
        }
        write_obstacles(out.create("fig4_obstacles.csv")?, &obs)?;
        outputs.extend(["fig4_trajectories.csv".into(), "fig4_obstacles.csv".into()]);
    }
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    let m = manifest(
        "benchmark",
        cfg,
        &[("scenarios", scenario_seed), ("setup", setup.seed)],
        BTreeMap::new(),
        &names,
    );
    finish(out, cfg, &m)?;
    Ok(BenchmarkRun {
        records: run.records,
        summary,
    })
}

fn load_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(f)
}

/// One-sided Welch tests `a < b` per method, epsilon and metric between two
/// result tables. Writes `compare.json`.
pub fn cmd_compare(a: &Path, b: &Path, out: &Output) -> Result<Vec<Comparison>> {
    let (ra, rb) = (load_records(a)?, load_records(b)?);
    let tests = compare_tables(&ra, &rb)?;
    out.prepare()?;
    out.write_json("compare.json", &tests)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("a".into(), file_hash(a)?);
    inputs.insert("b".into(), file_hash(b)?);
    let m = Manifest {
        command: "compare".into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: String::new(),
        seed: 0,
        seeds: BTreeMap::new(),
        inputs,
        outputs: vec!["compare.json".into()],
    };
    out.write_json("manifest.json", &m)?;
    Ok(tests)
}
