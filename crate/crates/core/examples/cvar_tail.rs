//! Exact and smoothed CVaR of a skewed sample as the risk level shrinks.
//!
//! cargo run --example cvar_tail

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tethered_uuv::optimizer::{cvar, smoothed_cvar};

fn main() -> tethered_uuv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // mostly clear of the obstacle, with a few close calls
    let margins: Vec<f64> = (0..50)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 0.1 {
                rng.random_range(-0.2..0.4)
            } else {
                rng.random_range(-1.5..-0.5)
            }
        })
        .collect();
    let mean = margins.iter().sum::<f64>() / margins.len() as f64;
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("mean {mean:.4}  max {max:.4}");
    println!("{:>6} {:>9} {:>9}", "alpha", "exact", "smoothed");
    for alpha in [1.0, 0.5, 0.2, 0.1, 0.05, 0.02] {
        let (s, _) = smoothed_cvar(&margins, alpha, 0.05);
        println!("{alpha:6.2} {:9.4} {s:9.4}", cvar(&margins, alpha)?);
    }
    Ok(())
}
