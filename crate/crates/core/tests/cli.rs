use std::fs;
use std::path::Path;
use std::process::Command;

use tethered_uuv::cli::{self, Output, RunConfig, EXIT_IO, EXIT_UNCONVERGED, EXIT_VALIDATION};
use tethered_uuv::control::{ControlPlan, FeedbackGain, HoldMode};
use tethered_uuv::evaluation::{Method, MetricsRecord};
use tethered_uuv::model::{ControlInput, OutputY};
use tethered_uuv::stochastic::DiffusionSpec;

fn quiet() -> RunConfig {
    let mut c = RunConfig::default();
    c.uncertainty.epsilon = 0.0;
    c.uncertainty.obstacle_pos_rel_err = 0.0;
    c.uncertainty.obstacle_size_rel_err = 0.0;
    c.diffusion = DiffusionSpec::zero();
    c.scenario.obstacles.clear();
    c
}

/// Cheap sweep settings: short horizon, few samples.
fn tiny_bench() -> RunConfig {
    let mut c = RunConfig { seed: 5, ..Default::default() };
    c.ocp.t_f = 4.0;
    c.ocp.n_samples = 4;
    c.ocp.solver.max_inner = 30;
    c.ocp.solver.max_outer = 3;
    c.baselines.mppi.samples = 16;
    c.baselines.mppi.horizon = 1.0;
    c.benchmark.n_location = 2;
    c.benchmark.n_model = 2;
    c
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tether"))
}

fn write_config(dir: &Path, cfg: &RunConfig) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, serde_json::to_string(cfg).unwrap()).unwrap();
    p
}

fn hover_plan(dir: &Path, cfg: &RunConfig) -> std::path::PathBuf {
    let p = dir.join("hover.csv");
    ControlPlan::constant(ControlInput::hover(&cfg.model), cfg.ocp.knot_spacing, cfg.ocp.t_f, HoldMode::ZeroOrder)
        .unwrap()
        .save(&p)
        .unwrap();
    p
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let c = RunConfig::default();
    let text = serde_json::to_string_pretty(&c).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    assert!(RunConfig::from_json(r#"{"ocp": {"alfa": 0.1}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
    let d = RunConfig::from_json(r#"{"diffusion": {"velocity_std": [0, 0, 0, 0]}}"#).unwrap();
    assert!(d.diffusion.is_zero());
}

#[test]
fn validation_runs_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [fn(&mut RunConfig); 5] = [
        |c| c.ocp.alpha = 0.0,
        |c| c.ocp.alpha = 1.5,
        |c| c.ocp.dt = 0.0,
        |c| c.ocp.dt = -0.05,
        |c| c.ocp.n_samples = 0,
    ];
    for (k, f) in cases.iter().enumerate() {
        let mut c = RunConfig::default();
        f(&mut c);
        assert!(c.validate().is_err(), "case {k}");
        let dir = tmp.path().join(format!("case{k}"));
        let out = Output::new(&dir, false);
        let e = cli::cmd_plan(&c, &out).unwrap_err();
        assert_eq!(cli::exit_code(&e), EXIT_VALIDATION);
        assert!(cli::cmd_benchmark(&c, &out).is_err());
        assert!(!dir.exists(), "case {k} wrote output");
    }
}

#[test]
fn hover_plan_without_uncertainty_stays_put() {
    let tmp = tempfile::tempdir().unwrap();
    let c = quiet();
    let plan = hover_plan(tmp.path(), &c);
    let tr = cli::cmd_simulate(&c, &plan, &Output::new(tmp.path().join("o"), false)).unwrap();
    assert!(tr.is_valid());
    let x0 = tr.states[0].0;
    for s in &tr.states {
        assert!((s.0 - x0).amax() < 1e-9);
    }
    let text = fs::read_to_string(tmp.path().join("o/trajectory.csv")).unwrap();
    assert!(text.starts_with("t,theta,r,l,X,theta_dot,r_dot,l_dot,X_dot,f_theta,f_r,f_l,f_X,x,d,u_theta,u_r,u_l,u_X,valid\n"));
    assert_eq!(text.lines().count(), tr.len() + 1);
}

#[test]
fn simulate_is_reproducible_file_for_file() {
    let tmp = tempfile::tempdir().unwrap();
    let c = RunConfig { seed: 3, ..Default::default() };
    let plan = hover_plan(tmp.path(), &c);
    for run in ["a", "b"] {
        cli::cmd_simulate(&c, &plan, &Output::new(tmp.path().join(run), false)).unwrap();
    }
    for f in ["trajectory.csv", "manifest.json", "config.json"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let m: cli::Manifest = serde_json::from_str(&fs::read_to_string(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.config_sha256, c.hash());
    assert!(m.seeds.contains_key("truth") && m.inputs.contains_key("plan"));
}

#[test]
fn trivial_plan_converges_to_hover() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quiet();
    c.scenario.target = OutputY::new(0.0, 1.5, 0.0);
    c.ocp.t_f = 4.0;
    let r = cli::cmd_plan(&c, &Output::new(tmp.path(), false)).unwrap();
    assert!(r.converged);
    assert_eq!(r.method, "RA-SAA+FB");
    // holding station: the UUV never leaves the terminal tolerance
    let flown = cli::cmd_simulate(&c, &tmp.path().join("plan.csv"), &Output::new(tmp.path().join("sim"), false)).unwrap();
    let start = flown.outputs[0];
    let worst = flown.outputs.iter().map(|y| (y.x - start.x).hypot(y.d - start.d)).fold(0.0, f64::max);
    assert!(flown.is_valid() && worst <= (c.ocp.delta_m + c.ocp.solver.tol_c).sqrt(), "UUV strays {worst} m");
    let back = ControlPlan::load(&tmp.path().join("plan.csv")).unwrap();
    assert_eq!(back, r.plan);
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["converged"], true);

    c.ocp.gain = FeedbackGain::zero();
    let r0 = cli::cmd_plan(&c, &Output::new(tmp.path().join("k0"), false)).unwrap();
    assert_eq!(r0.method, "RA-SAA");
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");

    let st = bin().args(["--out", out.to_str().unwrap(), "simulate", "--plan", "/no/such/plan.csv"]).status().unwrap();
    assert_eq!(st.code(), Some(EXIT_VALIDATION));

    let st = bin().args(["--config", "/no/such/config.json", "plan"]).status().unwrap();
    assert_eq!(st.code(), Some(cli::EXIT_IO));

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"ocp": {"alpha": 0}}"#).unwrap();
    let st = bin().args(["--config", bad.to_str().unwrap(), "plan"]).status().unwrap();
    assert_eq!(st.code(), Some(EXIT_VALIDATION));

    // far target with a 0.1 s horizon cannot meet the terminal bound
    let mut c = quiet();
    c.ocp.t_f = 0.1;
    c.ocp.knot_spacing = 0.05;
    c.scenario.target = OutputY::new(3.0, 6.0, 3.0);
    let cfg = write_config(tmp.path(), &c);
    let st = bin()
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "plan"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(EXIT_UNCONVERGED));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(rep["mean_h"].as_f64().unwrap() > c.ocp.delta_m);
}

#[test]
fn benchmark_table_counts_and_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = tiny_bench();
    c.benchmark.epsilons = vec![0.2];
    let run = cli::cmd_benchmark(&c, &Output::new(tmp.path(), true)).unwrap();
    assert_eq!(run.records.len(), 2 * 2 * Method::ALL.len());
    let text = fs::read_to_string(tmp.path().join("results.csv")).unwrap();
    assert!(text.starts_with("method,i,j,epsilon,rho_final,rho_collision,rho_energy,valid\n"));
    assert_eq!(text.lines().count(), 17);
    for f in ["fig5_final_error.csv", "fig5_collision.csv", "fig5_energy.csv"] {
        let t = fs::read_to_string(tmp.path().join(f)).unwrap();
        assert!(t.starts_with("epsilon,method,mean,std,significant\n"), "{f}");
        assert_eq!(t.lines().count(), 1 + Method::ALL.len());
    }
    let traj = fs::read_to_string(tmp.path().join("fig4_trajectories.csv")).unwrap();
    assert!(traj.starts_with("series,t,x,d,X,valid\n"));
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn epsilon_sweep_blocks_and_rerun_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = tiny_bench();
    c.benchmark.n_location = 1;
    c.benchmark.n_model = 2;
    c.benchmark.methods = vec![Method::RaSaaFb, Method::AstarPidCbf];
    let a = cli::cmd_benchmark(&c, &Output::new(tmp.path().join("a"), false)).unwrap();
    let eps: Vec<f64> = a.summary.blocks.iter().map(|b| b.epsilon).collect();
    assert_eq!(eps, vec![0.0, 0.2, 0.5]);
    cli::cmd_benchmark(&c, &Output::new(tmp.path().join("b"), false)).unwrap();
    for f in ["summary.json", "results.csv", "manifest.json"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn compare_two_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let rec = |method: &str, i, j, e: f64| MetricsRecord {
        method: method.into(),
        i,
        j,
        epsilon: 0.2,
        rho_final: e,
        rho_collision: 0,
        rho_energy: 1.0,
        valid: true,
    };
    let a: Vec<MetricsRecord> = (0..3).map(|i| rec("MPPI", i, 0, 1.0 + i as f64)).collect();
    let b: Vec<MetricsRecord> = (0..3).map(|i| rec("MPPI", i, 0, 4.0 + i as f64)).collect();
    let (pa, pb) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    tethered_uuv::evaluation::write_records(&a, fs::File::create(&pa).unwrap()).unwrap();
    tethered_uuv::evaluation::write_records(&b, fs::File::create(&pb).unwrap()).unwrap();
    let tests = cli::cmd_compare(&pa, &pb, &Output::new(tmp.path().join("o"), false)).unwrap();
    let fe = tests.iter().find(|c| c.metric == "final_error").unwrap();
    let t = fe.test.as_ref().unwrap();
    assert!((t.p - 0.0106).abs() < 5e-4 && t.significant, "{t:?}");
    assert!(tmp.path().join("o/compare.json").exists());

    let e = cli::cmd_compare(&tmp.path().join("missing.csv"), &pb, &Output::new(tmp.path().join("o"), false)).unwrap_err();
    assert_eq!(cli::exit_code(&e), EXIT_IO);
}
