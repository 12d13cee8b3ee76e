//! Desk-scale Monte-Carlo comparison of all four methods.
//!
//! cargo run --release --example benchmark_sweep -- [N_location] [N_model]

use std::time::Instant;

use tethered_uuv::evaluation::{generate_scenarios, run_benchmark, summarize, BenchmarkSetup, Method, ScenarioRules};

fn main() -> tethered_uuv::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("counts are integers"));
    let n_location = args.next().unwrap_or(4);
    let n_model = args.next().unwrap_or(3);

    let scenarios = generate_scenarios(n_location, 2024, &ScenarioRules::default())?;
    let setup = BenchmarkSetup::new(Method::ALL.to_vec(), vec![0.0, 0.2, 0.5], n_model, 7);
    let start = Instant::now();
    let out = run_benchmark(&setup, &scenarios, |rows| {
        eprintln!("{} rows from location {}", rows.len(), rows[0].i);
        Ok(())
    })?;
    let summary = summarize(&out.records, &out.solves, Method::RaSaaFb)?;
    for b in &summary.blocks {
        println!("epsilon = {}", b.epsilon);
        for a in &b.methods {
            println!(
                "  {:<11} final {:6.3} +- {:5.3}   collision {:5.3}   energy {:9.3e}",
                a.method, a.final_error.mean, a.final_error.std, a.collision.mean, a.energy.mean
            );
        }
        for (m, ok, n) in &b.solves_converged {
            println!("  {m} converged {ok}/{n}");
        }
    }
    println!("{:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
