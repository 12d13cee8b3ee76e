//! One-sided Welch tests on per-location means, the way the benchmark
//! summary stars its bars.
//!
//! cargo run --example welch_compare

use tethered_uuv::evaluation::{aggregate, welch_t_test, Direction, MetricsRecord};

fn main() -> tethered_uuv::Result<()> {
    let row = |method: &str, i: usize, j: usize, e: f64| MetricsRecord {
        method: method.into(),
        i,
        j,
        epsilon: 0.5,
        rho_final: e,
        rho_collision: (e > 1.0) as u8,
        rho_energy: 1e6 * (1.0 + e),
        valid: true,
    };
    let mut records = vec![];
    for i in 0..6 {
        for j in 0..3 {
            let jitter = 0.05 * ((i * 3 + j) % 4) as f64;
            records.push(row("A", i, j, 0.4 + jitter));
            records.push(row("B", i, j, 0.7 + 0.1 * i as f64 + jitter));
        }
    }
    let aggs = aggregate(&records)?;
    for a in &aggs {
        println!("{}: final {:.3} +- {:.3}, collision {:.3}", a.method, a.final_error.mean, a.final_error.std, a.collision.mean);
    }
    let t = welch_t_test(&aggs[0].final_error.per_location, &aggs[1].final_error.per_location, Direction::Less)?;
    println!("A < B on final error: t {:.3}, df {:.2}, p {:.4}{}", t.t, t.df, t.p, if t.significant { " *" } else { "" });

    let t = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Direction::Less)?;
    println!("textbook case: p {:.4}", t.p);
    Ok(())
}
