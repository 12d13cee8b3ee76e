use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tethered_uuv::cli::{self, Output, RunConfig, EXIT_OK, EXIT_UNCONVERGED, EXIT_VALIDATION};
use tethered_uuv::Result;

#[derive(Parser)]
#[command(version, about = "Risk-aware planning and benchmarking for a tethered UUV-USV system")]
struct Args {
    /// JSON run configuration; defaults apply to absent sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed, overriding the configuration's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (default: the configuration's, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write plot-ready CSVs.
    #[arg(long, global = true)]
    emit_plot_data: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fly a saved plan once against a sampled plant.
    Simulate {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Solve the configured scenario.
    Plan,
    /// Monte-Carlo comparison of all methods.
    Benchmark,
    /// One-sided Welch tests between two result tables.
    Compare { a: PathBuf, b: PathBuf },
}

fn run(args: Args) -> Result<i32> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let dir = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    cfg.out = Some(dir.clone());
    let out = Output::new(&dir, args.emit_plot_data);
    match args.cmd {
        Cmd::Simulate { plan } => {
            let tr = cli::cmd_simulate(&cfg, &plan, &out)?;
            let y = tr.final_output();
            println!("final x {:.4} d {:.4} X {:.4} valid {}", y.x, y.d, y.usv_x, tr.is_valid());
            Ok(EXIT_OK)
        }
        Cmd::Plan => {
            let r = cli::cmd_plan(&cfg, &out)?;
            println!(
                "{} converged {} objective {:.4} cvar {:.4} mean_h {:.4}",
                r.method, r.converged, r.objective, r.cvar_value, r.mean_h
            );
            Ok(if r.converged { EXIT_OK } else { EXIT_UNCONVERGED })
        }
        Cmd::Benchmark => {
            let run = cli::cmd_benchmark(&cfg, &out)?;
            for b in &run.summary.blocks {
                println!("epsilon {}", b.epsilon);
                for a in &b.methods {
                    println!(
                        "  {:<11} final {:.3} collision {:.3} energy {:.4e}",
                        a.method, a.final_error.mean, a.collision.mean, a.energy.mean
                    );
                }
            }
            Ok(EXIT_OK)
        }
        Cmd::Compare { a, b } => {
            for c in cli::cmd_compare(&a, &b, &out)? {
                let p = c.test.map_or("n/a".to_string(), |t| format!("{:.4}{}", t.p, if t.significant { " *" } else { "" }));
                println!("{} < {} eps {} {}: p {}", c.a, c.b, c.epsilon, c.metric, p);
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(j) = args.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().expect("pool set once");
    }
    match run(args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
