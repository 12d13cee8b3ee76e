//! Random start/target/obstacle layouts in the 8 m x 8 m arena.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OutputY;
use crate::stochastic::Obstacle;

/// Sampling ranges and rejection rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioRules {
    pub x_range: [f64; 2],
    pub d_range: [f64; 2],
    pub obstacle_x: [f64; 2],
    pub obstacle_d: [f64; 2],
    pub obstacle_a: [f64; 2],
    /// Minimum distance of start and target from the true obstacle surface.
    pub clearance: f64,
    pub min_depth: f64,
    /// Relative observation error of the obstacle position and size.
    pub obstacle_pos_rel_err: f64,
    pub obstacle_size_rel_err: f64,
    pub t_f: f64,
    pub max_rejections: usize,
}

impl Default for ScenarioRules {
    fn default() -> Self {
        ScenarioRules {
            x_range: [-4.0, 4.0],
            d_range: [0.0, 8.0],
            obstacle_x: [-3.0, 3.0],
            obstacle_d: [1.5, 6.5],
            obstacle_a: [0.3, 1.2],
            clearance: 0.5,
            min_depth: 0.5,
            obstacle_pos_rel_err: 0.30,
            obstacle_size_rel_err: 0.10,
            t_f: 12.0,
            max_rejections: 10_000,
        }
    }
}

impl ScenarioRules {
    pub fn validate(&self) -> Result<()> {
        let ranges = [self.x_range, self.d_range, self.obstacle_x, self.obstacle_d, self.obstacle_a];
        if ranges.iter().any(|r| !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1])) {
            return Err(Error::invalid("scenario ranges must be finite with lo <= hi"));
        }
        if !(self.obstacle_d[0] > 0.0 && self.obstacle_a[0] > 0.0) {
            return Err(Error::invalid("obstacle depth and radius ranges must be positive"));
        }
        for v in [self.obstacle_pos_rel_err, self.obstacle_size_rel_err] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("observation error must lie in [0, 1), got {v}")));
            }
        }
        if !(self.t_f > 0.0 && self.clearance >= 0.0 && self.min_depth >= 0.0) {
            return Err(Error::invalid("t_f must be positive, clearance and min_depth non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: usize,
    pub y0: OutputY,
    /// Target; its USV coordinate equals the UUV's `x`.
    pub y_d: OutputY,
    pub obstacle: Obstacle,
    /// What the planners get to see.
    pub observed: Obstacle,
    pub t_f: f64,
    pub seed: u64,
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn noisy<R: Rng>(rng: &mut R, v: f64, rel: f64) -> f64 {
    v + rel * v.abs() * (2.0 * rng.random::<f64>() - 1.0)
}

/// Draw `n` scenarios. Start and target points closer than the clearance to
/// the true obstacle, or shallower than the minimum depth, are redrawn.
pub fn generate_scenarios(n: usize, seed: u64, rules: &ScenarioRules) -> Result<Vec<Scenario>> {
    if n == 0 {
        return Err(Error::invalid("N_location must be at least 1"));
    }
    rules.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for index in 0..n {
        let obstacle = Obstacle::new(
            uniform(&mut rng, rules.obstacle_x),
            uniform(&mut rng, rules.obstacle_d),
            uniform(&mut rng, rules.obstacle_a),
        );
        let mut rejections = 0;
        let mut point = |rng: &mut ChaCha8Rng| -> Result<(f64, f64)> {
            loop {
                let (x, d) = (uniform(rng, rules.x_range), uniform(rng, rules.d_range));
                if d >= rules.min_depth && obstacle.clearance(x, d) >= rules.clearance {
                    return Ok((x, d));
                }
                rejections += 1;
                if rejections >= rules.max_rejections {
                    return Err(Error::TooManyRejections(rejections));
                }
            }
        };
        let (x0, d0) = point(&mut rng)?;
        let (xd, dd) = point(&mut rng)?;
        let observed = Obstacle::new(
            noisy(&mut rng, obstacle.x, rules.obstacle_pos_rel_err),
            noisy(&mut rng, obstacle.d, rules.obstacle_pos_rel_err),
            noisy(&mut rng, obstacle.a, rules.obstacle_size_rel_err),
        );
        out.push(Scenario {
            index,
            y0: OutputY::new(x0, d0, x0),
            y_d: OutputY::new(xd, dd, xd),
            obstacle,
            observed,
            t_f: rules.t_f,
            seed: rng.random(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let r = ScenarioRules::default();
        assert_eq!(generate_scenarios(20, 5, &r).unwrap(), generate_scenarios(20, 5, &r).unwrap());
        assert_ne!(generate_scenarios(20, 5, &r).unwrap(), generate_scenarios(20, 6, &r).unwrap());
    }

    #[test]
    fn accepted_points_respect_the_rules() {
        let r = ScenarioRules::default();
        let sc = generate_scenarios(100, 1, &r).unwrap();
        assert_eq!(sc.len(), 100);
        for s in &sc {
            for y in [s.y0, s.y_d] {
                assert!(y.d >= 0.5 && s.obstacle.clearance(y.x, y.d) >= 0.5);
                assert!((-4.0..=4.0).contains(&y.x) && y.d <= 8.0);
                assert_eq!(y.usv_x, y.x);
            }
            let o = (s.obstacle, s.observed);
            assert!((o.1.x - o.0.x).abs() <= 0.3 * o.0.x.abs() + 1e-12);
            assert!((o.1.d - o.0.d).abs() <= 0.3 * o.0.d + 1e-12);
            assert!((o.1.a - o.0.a).abs() <= 0.1 * o.0.a + 1e-12);
        }
    }

    #[test]
    fn impossible_rules_give_up() {
        let r = ScenarioRules {
            d_range: [0.0, 0.4],
            max_rejections: 50,
            ..Default::default()
        };
        assert!(matches!(generate_scenarios(1, 0, &r), Err(Error::TooManyRejections(50))));
        assert!(generate_scenarios(0, 0, &ScenarioRules::default()).is_err());
    }
}
